//! Property checks over a complete controller design.
//!
//! Each check is named, returns pass/fail with a short detail line and never
//! aborts the suite: an error inside a check counts as a failure of that
//! check.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::Design;
use crate::error::Result;
use crate::geometry::{chebyshev_center, Polyhedron};
use crate::linalg::{cross_block_max, spectral_radius, to_dyn, vcat, vstack};
use crate::pkpd::{bis_output, hill_invert, FastState, PdParams, SlowState};
use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::sim::{simulate_closed_loop, SimLog, SimOptions};
use crate::terminal::{build_w_lambda, dare_residual};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect()
    }

    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{mark}  {:width$}  {}", c.name, c.detail);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub seed: u64,
    /// Random cases for the cancellation and Hill checks.
    pub cases: usize,
    pub invariance_samples: usize,
    pub invariance_steps: usize,
    pub qp_cases: usize,
    pub duration: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            seed: 2024,
            cases: 100,
            invariance_samples: 1000,
            invariance_steps: 200,
            qp_cases: 100,
            duration: 600.0,
        }
    }
}

pub const CANCELLATION_TOL: f64 = 1e-12;
pub const DARE_TOL: f64 = 1e-8;
pub const BLOCK_TOL: f64 = 1e-10;
pub const INVARIANCE_TOL: f64 = 1e-8;
pub const QP_ORACLE_TOL: f64 = 1e-6;
pub const KKT_TOL: f64 = 1e-8;
pub const DESCENT_SLACK: f64 = 1e-8;
pub const STEADY_EQ_TOL: f64 = 1e-8;
pub const STEADY_STATE_TOL: f64 = 1e-10;
pub const COMPENSATION_TOL: f64 = 1e-9;
pub const HILL_TOL: f64 = 1e-10;

fn check(name: &'static str, r: Result<(bool, String)>) -> CheckResult {
    match r {
        Ok((passed, detail)) => CheckResult {
            name,
            passed,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_validation(design: &Design, opts: &ValidationOptions) -> ValidationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = vec![
        check(
            "cancellation",
            check_cancellation(design, opts.cases, &mut rng),
        ),
        check("dare", check_dare(design)),
        check("steady_segment", check_steady_segment(design)),
        check(
            "terminal_invariance",
            check_invariance(
                design,
                opts.invariance_samples,
                opts.invariance_steps,
                &mut rng,
            ),
        ),
        check("qp_oracle", check_qp_oracle(opts.qp_cases, &mut rng)),
        check("hill_roundtrip", check_hill_roundtrip(opts.cases, &mut rng)),
    ];
    let run = design.controller().and_then(|mut ctrl| {
        simulate_closed_loop(
            &design.model,
            &design.patient.pd,
            &mut ctrl,
            FastState::zeros(),
            SlowState::zeros(),
            &SimOptions::new(opts.duration),
        )
    });
    match run {
        Ok(log) => {
            checks.push(check(
                "recursive_feasibility",
                Ok(recursive_feasibility(&log)),
            ));
            checks.push(check("lyapunov_descent", Ok(lyapunov_descent(&log))));
            checks.push(check(
                "steady_consistency",
                steady_consistency(design, &log),
            ));
            checks.push(check("terminal_membership", Ok(terminal_membership(&log))));
            checks.push(check(
                "compensation_equivalence",
                Ok(compensation_equivalence(design, &log)),
            ));
            checks.push(check(
                "input_admissibility",
                Ok(input_admissibility(design, &log)),
            ));
        }
        Err(e) => {
            for name in [
                "recursive_feasibility",
                "lyapunov_descent",
                "steady_consistency",
                "terminal_membership",
                "compensation_equivalence",
                "input_admissibility",
            ] {
                checks.push(CheckResult {
                    name,
                    passed: false,
                    detail: format!("closed loop failed: {e}"),
                });
            }
        }
    }
    ValidationReport { checks }
}

fn uniform_vec4(rng: &mut impl Rng, hi: f64) -> Vector4<f64> {
    Vector4::from_fn(|_, _| rng.gen_range(0.0..hi))
}

/// One full step with `u = v + D xs` against one nominal fast step with `v`.
pub fn check_cancellation(
    design: &Design,
    cases: usize,
    rng: &mut impl Rng,
) -> Result<(bool, String)> {
    let m = &design.model;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let xf = FastState(uniform_vec4(rng, 10.0));
        let xs = SlowState(uniform_vec4(rng, 10.0));
        let v = Vector2::new(
            rng.gen_range(design.v_box.lower[0]..=design.v_box.upper[0]),
            rng.gen_range(design.v_box.lower[1]..=design.v_box.upper[1]),
        );
        let u = v + design.gain.apply(&xs);
        let (full, _) = m.step(&xf, &xs, &u);
        let nominal = m.step_nominal(&xf, &v);
        worst = worst.max((full.0 - nominal.0).amax());
    }
    Ok((
        worst <= CANCELLATION_TOL,
        format!(
            "max fast-state mismatch {worst:.2e} over {cases} cases (tol {CANCELLATION_TOL:.0e})"
        ),
    ))
}

pub fn check_dare(design: &Design) -> Result<(bool, String)> {
    let t = &design.terminal;
    let a = to_dyn(&design.model.a_f);
    let b = to_dyn(&design.model.b);
    let res = dare_residual(
        &a,
        &b,
        &to_dyn(&design.cfg.q),
        &to_dyn(&design.cfg.r),
        &to_dyn(&t.p),
    );
    let pd = t.p.cholesky().is_some();
    let rho = spectral_radius(&to_dyn(&(design.model.a_f + design.model.b * t.k)));
    let cross = cross_block_max(&t.p).max(cross_block_max(&t.k));
    let passed = res <= DARE_TOL && pd && rho < 1.0 && cross <= BLOCK_TOL;
    Ok((
        passed,
        format!("residual {res:.2e}, P ≻ 0: {pd}, ρ(A+BK) = {rho:.6}, cross blocks {cross:.1e}"),
    ))
}

pub fn check_steady_segment(design: &Design) -> Result<(bool, String)> {
    let (a, b) = design.steady_segment()?;
    let z = &design.z_s;
    let on_line = (z.g_eff * a)[0] - z.c;
    let on_line = on_line.abs().max(((z.g_eff * b)[0] - z.c).abs());
    let inside = [a, b]
        .iter()
        .all(|v| (0..2).all(|i| v[i] >= z.lower[i] - 1e-12 && v[i] <= z.upper[i] + 1e-12));
    let passed = on_line <= 1e-12 * (1.0 + z.c) && inside;
    Ok((
        passed,
        format!(
            "endpoints ({:.6}, {:.6}) – ({:.6}, {:.6}), line residual {on_line:.1e}",
            a[0], a[1], b[0], b[1]
        ),
    ))
}

/// Hit-and-run samples from a bounded full-dimensional polyhedron.
pub fn sample_polytope(
    p: &Polyhedron,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DVector<f64>>> {
    let n = p.dim();
    let (mut x, radius) = chebyshev_center(p, 1e6)?
        .ok_or_else(|| crate::Error::InfeasibleSet("cannot sample an empty polyhedron".into()))?;
    if radius <= 0.0 {
        return Err(crate::Error::InfeasibleSet(
            "polyhedron has empty interior".into(),
        ));
    }
    const BURN_IN: usize = 200;
    const THIN: usize = 5;
    let mut out = Vec::with_capacity(count);
    let mut step = 0;
    while out.len() < count {
        let d: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = d.norm();
        if norm < 1e-3 {
            continue;
        }
        let d = d / norm;
        let fd: DVector<f64> = &p.f * &d;
        let slack = &p.g - &p.f * &x;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..p.n_rows() {
            let s = slack[i].max(0.0);
            if fd[i] > 1e-14 {
                hi = hi.min(s / fd[i]);
            } else if fd[i] < -1e-14 {
                lo = lo.max(s / fd[i]);
            }
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(crate::Error::InfeasibleSet(
                "polyhedron is unbounded".into(),
            ));
        }
        x += d * rng.gen_range(lo..=hi);
        step += 1;
        if step > BURN_IN && step % THIN == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

pub fn check_invariance(
    design: &Design,
    samples: usize,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<(bool, String)> {
    let t = &design.terminal;
    let w_lambda = build_w_lambda(&t.k, &t.psi, &design.v_box, t.lambda)?;
    let a_w = to_dyn(&t.a_w);
    let points = sample_polytope(&t.x_a, samples, rng)?;
    let mut worst: f64 = f64::NEG_INFINITY;
    for w0 in points {
        let mut w = w0;
        worst = worst.max(t.x_a.max_violation(&w));
        for _ in 0..steps {
            w = &a_w * &w;
            worst = worst
                .max(t.x_a.max_violation(&w))
                .max(w_lambda.max_violation(&w));
        }
    }
    Ok((
        worst <= INVARIANCE_TOL,
        format!(
            "{samples} samples × {steps} steps, worst row violation {worst:.2e}, k* = {}, {} rows",
            t.k_star,
            t.x_a.n_rows()
        ),
    ))
}

/// Exact minimizer of a strictly convex QP by trying every subset of
/// inequalities as active; returns `None` when no subset is feasible.
pub fn enumerate_qp(p: &QpProblem) -> Option<DVector<f64>> {
    let n = p.n();
    let q = p.a_in.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << q) {
        let rows: Vec<usize> = (0..q).filter(|i| mask & (1 << i) != 0).collect();
        let a_act = p.a_in.select_rows(&rows);
        let b_act = DVector::from_iterator(rows.len(), rows.iter().map(|&i| p.b_in[i]));
        let a = vstack(&[&p.a_eq, &a_act]);
        let b = vcat(&[&p.b_eq, &b_act]);
        let m = a.nrows();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&a);
        let rhs = vcat(&[&(-&p.f), &b]);
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let z = sol.rows(0, n).into_owned();
        if p.max_violation(&z) > 1e-9 {
            continue;
        }
        let obj = p.objective(&z);
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, z));
        }
    }
    best.map(|(_, z)| z)
}

/// Random feasible strictly convex QP with `n ≤ 6`, at most 3 inequalities
/// and at most 2 equalities.
pub fn random_qp(rng: &mut impl Rng) -> QpProblem {
    let n = rng.gen_range(1..=6);
    let p = rng.gen_range(0..=2usize.min(n - 1));
    let q = rng.gen_range(0..=3);
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &z0;
    let a_in = DMatrix::from_fn(q, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_in = &a_in * &z0 + DVector::from_fn(q, |_, _| rng.gen_range(0.0..1.0));
    QpProblem {
        h,
        f,
        a_eq,
        b_eq,
        a_in,
        b_in,
    }
}

pub fn check_qp_oracle(cases: usize, rng: &mut impl Rng) -> Result<(bool, String)> {
    let solver = QpSolver::default();
    let (mut worst_z, mut worst_kkt): (f64, f64) = (0.0, 0.0);
    let mut bad_status = 0;
    for _ in 0..cases {
        let qp = random_qp(rng);
        let sol = solver.solve(&qp, None)?;
        let Some(oracle) = enumerate_qp(&qp) else {
            bad_status += 1;
            continue;
        };
        if sol.status != QpStatus::Optimal {
            bad_status += 1;
            continue;
        }
        worst_z = worst_z.max((&sol.z - oracle).amax());
        worst_kkt = worst_kkt.max(sol.kkt.max());
    }
    let passed = bad_status == 0 && worst_z <= QP_ORACLE_TOL && worst_kkt <= KKT_TOL;
    Ok((
        passed,
        format!(
            "{cases} QPs: max |z - z_oracle| {worst_z:.2e}, max KKT {worst_kkt:.2e}, {bad_status} non-optimal"
        ),
    ))
}

/// Random PD parameters and set-points: invert, evaluate, compare.
pub fn check_hill_roundtrip(cases: usize, rng: &mut impl Rng) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let e0 = rng.gen_range(80.0..100.0);
        let emax = e0 * rng.gen_range(0.7..1.3);
        let pd = PdParams::new(
            e0,
            emax,
            rng.gen_range(0.5..5.0),
            rng.gen_range(0.5..10.0),
            rng.gen_range(1.0..40.0),
        )?;
        let lo = (e0 - emax).max(0.0);
        let y = lo + (e0 - lo) * rng.gen_range(0.05..0.95);
        let c = hill_invert(y, &pd)?;
        let share = rng.gen_range(0.0..=1.0);
        let xf = FastState(Vector4::new(
            0.0,
            share * c * pd.ce50p,
            0.0,
            (1.0 - share) * c * pd.ce50r,
        ));
        worst = worst.max((bis_output(&xf, &pd) - y).abs());
    }
    Ok((
        worst <= HILL_TOL,
        format!("max |BIS(c) - y_ref| {worst:.2e} over {cases} draws"),
    ))
}

pub fn recursive_feasibility(log: &SimLog) -> (bool, String) {
    let bad = log.records.iter().filter(|r| r.status != "optimal").count();
    (
        bad == 0,
        format!("{} solves, {bad} not optimal", log.records.len()),
    )
}

/// Optimal cost non-increasing from the second solve on.
pub fn lyapunov_descent(log: &SimLog) -> (bool, String) {
    let costs: Vec<f64> = log.records.iter().map(|r| r.cost).collect();
    let worst = costs
        .windows(2)
        .skip(1)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    (
        worst <= DESCENT_SLACK,
        format!("largest cost increase {worst:.2e} (slack {DESCENT_SLACK:.0e})"),
    )
}

pub fn steady_consistency(design: &Design, log: &SimLog) -> Result<(bool, String)> {
    let a = design.model.a_f;
    let lu = (nalgebra::Matrix4::identity() - a).lu();
    let mut eq: f64 = 0.0;
    let mut xa_err: f64 = 0.0;
    for r in &log.records {
        eq = eq.max(((design.steady.g_eff * r.v_a)[0] - design.steady.c).abs());
        let x = lu
            .solve(&(design.model.b * r.v_a))
            .ok_or_else(|| crate::Error::Numerical("I - A singular".into()))?;
        xa_err = xa_err.max((x - r.x_a).amax());
    }
    Ok((
        eq <= STEADY_EQ_TOL && xa_err <= STEADY_STATE_TOL,
        format!("|g_eff v_a - c| ≤ {eq:.1e}, |x_a - (I-A)⁻¹B v_a| ≤ {xa_err:.1e}"),
    ))
}

pub fn terminal_membership(log: &SimLog) -> (bool, String) {
    let worst = log
        .records
        .iter()
        .map(|r| r.terminal_slack)
        .fold(f64::INFINITY, f64::min);
    (
        worst >= -INVARIANCE_TOL,
        format!("smallest terminal slack {worst:.2e}"),
    )
}

/// Replays the logged `v` through the nominal fast model.
pub fn compensation_equivalence(design: &Design, log: &SimLog) -> (bool, String) {
    let mut x = FastState(log.records[0].xf);
    let mut worst: f64 = 0.0;
    for r in &log.records {
        worst = worst.max((x.0 - r.xf).amax());
        x = design.model.step_nominal(&x, &r.v);
    }
    worst = worst.max((x.0 - log.final_xf).amax());
    (
        worst <= COMPENSATION_TOL,
        format!(
            "max |x_f - x_f,nominal| {worst:.2e} over {} steps",
            log.records.len()
        ),
    )
}

pub fn input_admissibility(design: &Design, log: &SimLog) -> (bool, String) {
    let clamped = log.records.iter().filter(|r| r.clamped).count();
    let outside = log
        .records
        .iter()
        .filter(|r| !design.u_box.contains(&r.u, 1e-12) || !design.v_box.contains(&r.v, 1e-9))
        .count();
    let negative = log
        .records
        .iter()
        .filter(|r| r.xf.iter().chain(r.xs.iter()).any(|x| *x < 0.0))
        .count();
    (
        clamped == 0 && outside == 0 && negative == 0,
        format!("{clamped} clamped, {outside} outside U or V, {negative} with negative states"),
    )
}

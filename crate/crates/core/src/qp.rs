//! Dense convex QP by a primal active-set method.
//!
//! ```text
//!     minimize     ½ zᵀ H z + fᵀ z
//!     subject to   A_eq z  = b_eq
//!                  A_in z <= b_in
//! ```
//!
//! Equalities stay in the KKT system throughout; inequalities enter and leave
//! a working set. A feasible starting point comes from the warm start when it
//! is feasible, otherwise from a minimum-violation LP.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{min_violation, Polyhedron};
use crate::linalg::{min_symmetric_eigenvalue, vcat, vstack};

/// Feasibility slack accepted for a starting point.
pub const START_TOL: f64 = 1e-9;
const REG_THRESHOLD: f64 = 1e-10;
const REG_DELTA: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.f.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        let ok = self.h.shape() == (n, n)
            && self.a_eq.ncols() == n
            && self.a_in.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_in.nrows() == self.b_in.len();
        if !ok {
            return Err(Error::Dimension("QP data have inconsistent shapes".into()));
        }
        if (&self.h - self.h.transpose()).amax() > 1e-9 * (1.0 + self.h.amax()) {
            return Err(Error::Numerical("QP Hessian is not symmetric".into()));
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }

    /// Largest violation of any constraint at `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * z - &self.b_eq).amax();
        let ineq = (&self.a_in * z - &self.b_in)
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        eq.max(ineq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_in: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_in)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub lambda_eq: DVector<f64>,
    /// Nonnegative multipliers of the inequality rows.
    pub mu_in: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    /// For infeasible problems: nonnegative weights over the inequality rows
    /// followed by signed weights over the equality rows, combining into
    /// `0ᵀz ≤ negative`.
    pub certificate: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub max_iter: Option<usize>,
}

impl QpSolver {
    pub fn solve(&self, p: &QpProblem, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
        p.check()?;
        let n = p.n();
        let h = regularized(&p.h);

        let start = match warm_start {
            Some(z) if z.len() == n && p.max_violation(z) <= START_TOL => z.clone(),
            _ => match feasible_start(p)? {
                Ok(z) => z,
                Err(cert) => {
                    return Ok(QpSolution {
                        z: DVector::zeros(n),
                        objective: f64::NAN,
                        status: QpStatus::Infeasible,
                        kkt: KktResiduals::default(),
                        lambda_eq: DVector::zeros(p.a_eq.nrows()),
                        mu_in: DVector::zeros(p.a_in.nrows()),
                        active: Vec::new(),
                        iterations: 0,
                        certificate: Some(cert),
                    })
                }
            },
        };

        let cap = self.max_iter.unwrap_or(10 * (n + p.a_in.nrows()) + 100);
        let mut z = start;
        let mut working = initial_working_set(p, &z);
        let mut iterations = 0;
        let mut status = QpStatus::MaxIter;
        let mut lambda_eq = DVector::zeros(p.a_eq.nrows());
        let mut mu_w = DVector::zeros(0);

        while iterations < cap {
            iterations += 1;
            let grad = &h * &z + &p.f;
            let (step, lam, mu) = solve_eq_qp(&h, &grad, &p.a_eq, &p.a_in, &working)?;
            lambda_eq = lam;
            mu_w = mu;
            let zscale = 1.0 + z.amax();
            if step.amax() <= 1e-11 * zscale {
                // stationary on the working set
                let worst = (0..working.len())
                    .filter(|&i| mu_w[i] < -1e-10 * (1.0 + grad.amax()))
                    .min_by(|&a, &b| mu_w[a].partial_cmp(&mu_w[b]).unwrap().then(a.cmp(&b)));
                match worst {
                    None => {
                        status = QpStatus::Optimal;
                        break;
                    }
                    Some(i) => {
                        working.remove(i);
                    }
                }
            } else {
                let mut alpha = 1.0;
                let mut blocking = None;
                for i in 0..p.a_in.nrows() {
                    if working.contains(&i) {
                        continue;
                    }
                    let ap = p.a_in.row(i).dot(&step.transpose());
                    if ap > 1e-14 * (1.0 + step.amax()) {
                        let slack = p.b_in[i] - p.a_in.row(i).dot(&z.transpose());
                        let t = (slack / ap).max(0.0);
                        if t < alpha {
                            alpha = t;
                            blocking = Some(i);
                        }
                    }
                }
                z += &step * alpha;
                if let Some(i) = blocking {
                    working.push(i);
                }
            }
        }

        let mut mu_in = DVector::zeros(p.a_in.nrows());
        for (j, &i) in working.iter().enumerate() {
            mu_in[i] = mu_w[j].max(0.0);
        }
        let kkt = kkt_residuals(p, &z, &lambda_eq, &mu_in);
        let mut active = working;
        active.sort_unstable();
        Ok(QpSolution {
            objective: p.objective(&z),
            z,
            status,
            kkt,
            lambda_eq,
            mu_in,
            active,
            iterations,
            certificate: None,
        })
    }
}

fn regularized(h: &DMatrix<f64>) -> DMatrix<f64> {
    if h.nrows() == 0 || min_symmetric_eigenvalue(h) >= REG_THRESHOLD {
        h.clone()
    } else {
        h + DMatrix::identity(h.nrows(), h.ncols()) * REG_DELTA
    }
}

/// Feasible point, or a Farkas-type certificate of infeasibility.
fn feasible_start(p: &QpProblem) -> Result<std::result::Result<DVector<f64>, DVector<f64>>> {
    let poly = Polyhedron::new(
        vstack(&[&p.a_in, &p.a_eq, &(-&p.a_eq)]),
        vcat(&[&p.b_in, &p.b_eq, &(-&p.b_eq)]),
    )?;
    if poly.n_rows() == 0 {
        return Ok(Ok(DVector::zeros(p.n())));
    }
    let rep = min_violation(&poly)?;
    if p.max_violation(&rep.point) <= START_TOL {
        return Ok(Ok(rep.point));
    }
    let (q, e) = (p.a_in.nrows(), p.a_eq.nrows());
    let y = &rep.certificate;
    let mut cert = DVector::zeros(q + e);
    cert.rows_mut(0, q).copy_from(&y.rows(0, q));
    for i in 0..e {
        cert[q + i] = y[q + i] - y[q + e + i];
    }
    Ok(Err(cert))
}

/// Working set of constraints active at `z` whose rows are linearly
/// independent of the equalities and of each other.
fn initial_working_set(p: &QpProblem, z: &DVector<f64>) -> Vec<usize> {
    let n = p.n();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let push = |row: DVector<f64>, basis: &mut Vec<DVector<f64>>| -> bool {
        let mut r = row;
        for _ in 0..2 {
            for b in basis.iter() {
                let c = r.dot(b);
                r -= b * c;
            }
        }
        let nrm = r.norm();
        if nrm > 1e-8 && basis.len() < n {
            basis.push(r / nrm);
            true
        } else {
            false
        }
    };
    for i in 0..p.a_eq.nrows() {
        let row = p.a_eq.row(i).transpose();
        let nrm = row.norm();
        if nrm > 0.0 {
            push(row / nrm, &mut basis);
        }
    }
    let mut working = Vec::new();
    for i in 0..p.a_in.nrows() {
        let row = p.a_in.row(i).transpose();
        let nrm = row.norm();
        if nrm == 0.0 {
            continue;
        }
        let slack = p.b_in[i] - row.dot(z);
        if slack.abs() <= 1e-9 * nrm * (1.0 + z.amax()) && push(row / nrm, &mut basis) {
            working.push(i);
        }
    }
    working
}

/// Step `p` and multipliers for `min ½pᵀHp + gᵀp s.t. A_eq p = 0, A_W p = 0`.
fn solve_eq_qp(
    h: &DMatrix<f64>,
    grad: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    a_in: &DMatrix<f64>,
    working: &[usize],
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = h.nrows();
    let e = a_eq.nrows();
    let w = working.len();
    let dim = n + e + w;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for i in 0..e {
        for j in 0..n {
            kkt[(n + i, j)] = a_eq[(i, j)];
            kkt[(j, n + i)] = a_eq[(i, j)];
        }
    }
    for (r, &i) in working.iter().enumerate() {
        for j in 0..n {
            kkt[(n + e + r, j)] = a_in[(i, j)];
            kkt[(j, n + e + r)] = a_in[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-grad));
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular KKT matrix".into()))?;
    Ok((
        sol.rows(0, n).into_owned(),
        sol.rows(n, e).into_owned(),
        sol.rows(n + e, w).into_owned(),
    ))
}

pub fn kkt_residuals(
    p: &QpProblem,
    z: &DVector<f64>,
    lambda_eq: &DVector<f64>,
    mu_in: &DVector<f64>,
) -> KktResiduals {
    let stat = &p.h * z + &p.f + p.a_eq.transpose() * lambda_eq + p.a_in.transpose() * mu_in;
    let slack = &p.b_in - &p.a_in * z;
    KktResiduals {
        stationarity: stat.amax(),
        primal_eq: (&p.a_eq * z - &p.b_eq).amax(),
        primal_in: slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max),
        complementarity: slack
            .iter()
            .zip(mu_in.iter())
            .map(|(s, m)| (s * m).abs())
            .fold(0.0, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(
        h: &[f64],
        f: &[f64],
        a_eq: &[f64],
        b_eq: &[f64],
        a_in: &[f64],
        b_in: &[f64],
    ) -> QpProblem {
        let n = f.len();
        QpProblem {
            h: DMatrix::from_row_slice(n, n, h),
            f: DVector::from_row_slice(f),
            a_eq: DMatrix::from_row_slice(b_eq.len(), n, a_eq),
            b_eq: DVector::from_row_slice(b_eq),
            a_in: DMatrix::from_row_slice(b_in.len(), n, a_in),
            b_in: DVector::from_row_slice(b_in),
        }
    }

    #[test]
    fn scalar_lower_bound() {
        // min z² s.t. z ≥ 1
        let p = problem(&[2.0], &[0.0], &[], &[], &[-1.0], &[-1.0]);
        let s = QpSolver::default().solve(&p, None).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] - 1.0).abs() < 1e-12);
        assert!(s.kkt.max() <= 1e-8);
    }

    #[test]
    fn projection_onto_line() {
        // min ‖z - (1, 1)‖² s.t. z1 + z2 = 1
        let p = problem(
            &[2.0, 0.0, 0.0, 2.0],
            &[-2.0, -2.0],
            &[1.0, 1.0],
            &[1.0],
            &[],
            &[],
        );
        let s = QpSolver::default().solve(&p, None).unwrap();
        assert!((s.z[0] - 0.5).abs() < 1e-12 && (s.z[1] - 0.5).abs() < 1e-12);
        // closed-form KKT solve
        let kkt = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 1.0, 0.0, 2.0, 1.0, 1.0, 1.0, 0.0]);
        let x = kkt
            .lu()
            .solve(&DVector::from_vec(vec![2.0, 2.0, 1.0]))
            .unwrap();
        assert!((s.z[0] - x[0]).abs() < 1e-12);
        assert!((s.lambda_eq[0] - x[2]).abs() < 1e-12);
    }

    #[test]
    fn infeasible_problem_reports_certificate() {
        // z ≤ 0 and z ≥ 1
        let p = problem(&[1.0], &[0.0], &[], &[], &[1.0, -1.0], &[0.0, -1.0]);
        let s = QpSolver::default().solve(&p, None).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        let y = s.certificate.unwrap();
        assert!(y.iter().all(|v| *v >= 0.0));
        let combo = p.a_in.transpose() * &y;
        assert!(combo.amax() < 1e-12);
        assert!(p.b_in.dot(&y) < 0.0);
    }

    #[test]
    fn psd_hessian_is_regularized() {
        // min z1 s.t. 0 ≤ z ≤ 1 with zero Hessian
        let p = problem(
            &[0.0; 4],
            &[1.0, 0.0],
            &[],
            &[],
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
            &[1.0, 0.0, 1.0, 0.0],
        );
        let s = QpSolver::default().solve(&p, None).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.z[0].abs() < 1e-9);
    }

    fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
        let n = rng.gen_range(1..=6);
        let q = rng.gen_range(0..=3);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
        QpProblem {
            h,
            f: DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::from_fn(q, n, |_, _| rng.gen_range(-1.0..1.0)),
            b_in: DVector::from_fn(q, |_, _| rng.gen_range(-0.5..1.0)),
        }
    }

    #[test]
    fn warm_start_matches_cold_start_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let solver = QpSolver::default();
        for _ in 0..50 {
            let p = random_qp(&mut rng);
            let cold = solver.solve(&p, None).unwrap();
            if cold.status != QpStatus::Optimal {
                continue;
            }
            let nudged = &cold.z * 0.5 + feasible_start(&p).unwrap().unwrap() * 0.5;
            let warm = solver.solve(&p, Some(&nudged)).unwrap();
            assert!((warm.objective - cold.objective).abs() <= 1e-8);
            let mut scaled = p.clone();
            scaled.h *= 7.5;
            scaled.f *= 7.5;
            let s = solver.solve(&scaled, None).unwrap();
            assert!((&s.z - &cold.z).amax() <= 1e-8);
        }
    }

    #[test]
    fn random_qps_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = random_qp(&mut rng);
            let s = QpSolver::default().solve(&p, None).unwrap();
            if s.status == QpStatus::Optimal {
                assert!(s.kkt.max() <= 1e-8, "{:?}", s.kkt);
                assert!(s.mu_in.iter().all(|m| *m >= 0.0));
            } else {
                assert_eq!(s.status, QpStatus::Infeasible);
            }
        }
    }
    /// Active set whose equality-constrained KKT point is primal feasible
    /// with nonnegative inequality multipliers.
    fn kkt_enumeration(p: &QpProblem) -> Option<DVector<f64>> {
        let (n, me, q) = (p.n(), p.a_eq.nrows(), p.a_in.nrows());
        for mask in 0u32..(1 << q) {
            let act: Vec<usize> = (0..q).filter(|i| mask >> i & 1 == 1).collect();
            let m = me + act.len();
            let mut kkt = DMatrix::zeros(n + m, n + m);
            let mut rhs = DVector::zeros(n + m);
            kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
            rhs.rows_mut(0, n).copy_from(&(-&p.f));
            for r in 0..m {
                let (row, b) = if r < me {
                    (p.a_eq.row(r).into_owned(), p.b_eq[r])
                } else {
                    (p.a_in.row(act[r - me]).into_owned(), p.b_in[act[r - me]])
                };
                kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
                kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
                rhs[n + r] = b;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let z = sol.rows(0, n).into_owned();
            let duals_ok = (me..m).all(|r| sol[n + r] >= -1e-10);
            if duals_ok && p.max_violation(&z) <= 1e-10 {
                return Some(z);
            }
        }
        None
    }

    #[test]
    fn matches_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let solver = QpSolver::default();
        for _ in 0..100 {
            let p = crate::validate::random_qp(&mut rng);
            let s = solver.solve(&p, None).unwrap();
            assert_eq!(s.status, QpStatus::Optimal);
            let oracle = kkt_enumeration(&p).expect("feasible by construction");
            assert!((&s.z - &oracle).amax() <= 1e-6, "{} vs {}", s.z, oracle);
            assert!(s.kkt.max() <= 1e-8);
            let alt = crate::validate::enumerate_qp(&p).unwrap();
            assert!((&alt - &oracle).amax() <= 1e-6);
        }
    }
}

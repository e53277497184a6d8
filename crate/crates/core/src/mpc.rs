//! MPC for tracking with an artificial steady input.
//!
//! Decision vector `z = (v_0, …, v_{N-1}, v_a) ∈ R^{2N+2}`. States are
//! eliminated through `x_{k+1} = A x_k + B v_k` and the artificial steady state
//! is `x_a = (I - A)⁻¹ B v_a`. The cost
//!
//! ```text
//! Σ_{k<N} ‖x_k - x_a‖²_Q + ‖v_k - v_a‖²_R + ‖x_N - x_a‖²_P + V_d(v_a)
//! ```
//!
//! is kept as `½ zᵀHz + (F x₀ + f₀)ᵀz + x₀ᵀCx₀ + c₀`; only the linear term
//! and the terminal right-hand side change between sampling instants.

use nalgebra::{
    DMatrix, DVector, Matrix2, Matrix2x4, Matrix4, Matrix4x2, RowVector2, Vector2, Vector4,
};

use crate::compensation::{segment_endpoints, CompensationGain, InputBox};
use crate::error::{Error, Result};
use crate::linalg::to_dyn;
use crate::pkpd::{DiscreteDynamics, FastState, SlowState, SteadyOutput};
use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::terminal::{controllability_index, TerminalIngredients};

/// Convex quadratic offset cost `weight·(directionᵀv_a - target)² + linearᵀv_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetCost {
    pub weight: f64,
    pub direction: Vector2<f64>,
    pub target: f64,
    pub linear: Vector2<f64>,
}

impl OffsetCost {
    /// `weight·(v_p - v_r / ratio)²`, zero exactly on the propofol:remifentanil
    /// ratio line.
    pub fn ratio(weight: f64, ratio: f64) -> Self {
        Self {
            weight,
            direction: Vector2::new(1.0, -1.0 / ratio),
            target: 0.0,
            linear: Vector2::zeros(),
        }
    }

    pub fn eval(&self, v: &Vector2<f64>) -> f64 {
        let e = self.direction.dot(v) - self.target;
        self.weight * e * e + self.linear.dot(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::param("vd.weight", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

impl Default for OffsetCost {
    fn default() -> Self {
        Self::ratio(10.0, 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
    pub epsilon: f64,
    pub lambda: f64,
    pub offset: OffsetCost,
    pub y_ref: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            q: Matrix4::from_diagonal(&Vector4::new(1.0, 10.0, 1.0, 10.0)),
            r: Matrix2::identity(),
            epsilon: 1e-6,
            lambda: 0.99,
            offset: OffsetCost::default(),
            y_ref: 50.0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("N must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::FiniteDetermination(format!(
                "lambda = {} must lie strictly inside (0, 1)",
                self.lambda
            )));
        }
        if self.q.symmetric_eigenvalues().iter().any(|l| *l < -1e-12) {
            return Err(Error::Config("Q must be positive semidefinite".into()));
        }
        if self.r.cholesky().is_none() {
            return Err(Error::Config("R must be positive definite".into()));
        }
        self.offset.validate()
    }
}

/// Strictly admissible steady inputs: `g_eff v = c` within a box tightened by
/// `ε` inside `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyInputSet {
    pub g_eff: RowVector2<f64>,
    pub c: f64,
    pub lower: Vector2<f64>,
    pub upper: Vector2<f64>,
}

impl SteadyInputSet {
    pub fn new(steady: &SteadyOutput, v: &InputBox, epsilon: f64) -> Result<Self> {
        let set = Self {
            g_eff: steady.g_eff,
            c: steady.c,
            lower: v.lower.add_scalar(epsilon),
            upper: v.upper.add_scalar(-epsilon),
        };
        steady_segment(&set)?;
        Ok(set)
    }

    /// Minimizer of the offset cost on the segment.
    pub fn offset_minimizer(&self, offset: &OffsetCost) -> Result<Vector2<f64>> {
        let (a, b) = steady_segment(self)?;
        let d = b - a;
        // V(t) = w (dᵀ(a + tΔ) - τ)² + lᵀ(a + tΔ), t ∈ [0, 1]
        let s = offset.direction.dot(&d);
        let e0 = offset.direction.dot(&a) - offset.target;
        let curv = 2.0 * offset.weight * s * s;
        let slope = 2.0 * offset.weight * s * e0 + offset.linear.dot(&d);
        let t = if curv > 0.0 {
            (-slope / curv).clamp(0.0, 1.0)
        } else if slope > 0.0 {
            0.0
        } else {
            1.0
        };
        Ok(a + d * t)
    }
}

/// Endpoints of the admissible steady-input segment, first component
/// increasing.
pub fn steady_segment(z: &SteadyInputSet) -> Result<(Vector2<f64>, Vector2<f64>)> {
    segment_endpoints(&z.g_eff.transpose(), z.c, &z.lower, &z.upper)
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    /// Applied input `v₀ + D xs`.
    pub u: Vector2<f64>,
    pub v0: Vector2<f64>,
    pub v_a: Vector2<f64>,
    pub x_a: Vector4<f64>,
    pub predicted_xf: Vec<Vector4<f64>>,
    /// Optimal value of the tracking cost, offset cost included.
    pub cost: f64,
    pub status: QpStatus,
    pub clamped: bool,
    pub iterations: usize,
    pub warm_started: bool,
}

#[derive(Debug, Clone)]
pub struct Controller {
    a: Matrix4<f64>,
    b: Matrix4x2<f64>,
    gain: CompensationGain,
    u_box: InputBox,
    v_box: InputBox,
    steady: SteadyInputSet,
    terminal: TerminalIngredients,
    cfg: MpcConfig,
    eq_map: Matrix4x2<f64>,
    /// `S_k`: state after `k` steps per unit of `z`, `k = 0…N`.
    state_maps: Vec<DMatrix<f64>>,
    a_powers: Vec<Matrix4<f64>>,
    h: DMatrix<f64>,
    f_x0: DMatrix<f64>,
    f_const: DVector<f64>,
    c_x0: Matrix4<f64>,
    c_const: f64,
    a_in_fixed: DMatrix<f64>,
    b_in_fixed: DVector<f64>,
    term_a: DMatrix<f64>,
    term_fx: DMatrix<f64>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    solver: QpSolver,
    previous: Option<DVector<f64>>,
    steps: usize,
}

impl Controller {
    pub fn new(
        model: &DiscreteDynamics,
        gain: CompensationGain,
        u_box: InputBox,
        v_box: InputBox,
        steady: SteadyInputSet,
        terminal: TerminalIngredients,
        cfg: MpcConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        steady_segment(&steady)?;
        let a = model.a_f;
        let b = model.b;
        let ci = controllability_index(&to_dyn(&a), &to_dyn(&b))?;
        if cfg.horizon < ci {
            return Err(Error::Config(format!(
                "horizon N = {} is below the controllability index {ci}",
                cfg.horizon
            )));
        }
        let n_h = cfg.horizon;
        let nz = 2 * n_h + 2;
        let ia = 2 * n_h;
        let eq_map = model.equilibrium_map()?;

        let sel = |k: usize| {
            let mut e = DMatrix::zeros(2, nz);
            e[(0, 2 * k)] = 1.0;
            e[(1, 2 * k + 1)] = 1.0;
            e
        };
        let e_a = sel(n_h);
        let a_d = to_dyn(&a);
        let b_d = to_dyn(&b);
        let m_d = to_dyn(&eq_map);
        let mut state_maps = vec![DMatrix::zeros(4, nz)];
        let mut a_powers = vec![Matrix4::identity()];
        for k in 0..n_h {
            let next = &a_d * &state_maps[k] + &b_d * sel(k);
            state_maps.push(next);
            a_powers.push(a * a_powers[k]);
        }

        let q = to_dyn(&cfg.q);
        let r = to_dyn(&cfg.r);
        let p = to_dyn(&terminal.p);
        let mut h_half = DMatrix::zeros(nz, nz);
        let mut f_x0 = DMatrix::zeros(nz, 4);
        let mut c_x0 = Matrix4::zeros();
        for k in 0..=n_h {
            let weight = if k < n_h { &q } else { &p };
            let t_k = &state_maps[k] - &m_d * &e_a;
            h_half += t_k.transpose() * weight * &t_k;
            f_x0 += t_k.transpose() * weight * to_dyn(&a_powers[k]) * 2.0;
            let wk = if k < n_h { cfg.q } else { terminal.p };
            c_x0 += a_powers[k].transpose() * wk * a_powers[k];
            if k < n_h {
                let dv = sel(k) - &e_a;
                h_half += dv.transpose() * &r * &dv;
            }
        }
        let off = &cfg.offset;
        let dir_z = e_a.transpose() * DVector::from_column_slice(off.direction.as_slice());
        h_half += &dir_z * dir_z.transpose() * off.weight;
        let f_const = &dir_z * (-2.0 * off.weight * off.target)
            + e_a.transpose() * DVector::from_column_slice(off.linear.as_slice());
        let c_const = off.weight * off.target * off.target;
        let h = &h_half * 2.0;
        let h = (&h + h.transpose()) * 0.5;

        // V on every v_k, then the steady box on v_a
        let n_fixed = 4 * n_h + 4;
        let mut a_in_fixed = DMatrix::zeros(n_fixed, nz);
        let mut b_in_fixed = DVector::zeros(n_fixed);
        for k in 0..=n_h {
            let (lo, up) = if k < n_h {
                (v_box.lower, v_box.upper)
            } else {
                (steady.lower, steady.upper)
            };
            for i in 0..2 {
                let row = 4 * k + 2 * i;
                a_in_fixed[(row, 2 * k + i)] = 1.0;
                b_in_fixed[row] = up[i];
                a_in_fixed[(row + 1, 2 * k + i)] = -1.0;
                b_in_fixed[row + 1] = -lo[i];
            }
        }
        let xa = &terminal.x_a;
        let fx = xa.f.columns(0, 4).into_owned();
        let fv = xa.f.columns(4, 2).into_owned();
        let term_a = &fx * &state_maps[n_h] + &fv * &e_a;
        let term_fx = &fx * to_dyn(&a_powers[n_h]);
        let mut a_eq = DMatrix::zeros(1, nz);
        a_eq[(0, ia)] = steady.g_eff[0];
        a_eq[(0, ia + 1)] = steady.g_eff[1];
        let b_eq = DVector::from_element(1, steady.c);

        Ok(Self {
            a,
            b,
            gain,
            u_box,
            v_box,
            steady,
            terminal,
            cfg,
            eq_map,
            state_maps,
            a_powers,
            h,
            f_x0,
            f_const,
            c_x0,
            c_const,
            a_in_fixed,
            b_in_fixed,
            term_a,
            term_fx,
            a_eq,
            b_eq,
            solver: QpSolver::default(),
            previous: None,
            steps: 0,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn steady_set(&self) -> &SteadyInputSet {
        &self.steady
    }

    pub fn terminal(&self) -> &TerminalIngredients {
        &self.terminal
    }

    pub fn gain(&self) -> &CompensationGain {
        &self.gain
    }

    pub fn tracking_set(&self) -> &InputBox {
        &self.v_box
    }

    pub fn input_set(&self) -> &InputBox {
        &self.u_box
    }

    pub fn n_variables(&self) -> usize {
        2 * self.cfg.horizon + 2
    }

    pub fn n_box_rows(&self) -> usize {
        self.a_in_fixed.nrows()
    }

    pub fn n_terminal_rows(&self) -> usize {
        self.term_a.nrows()
    }

    pub fn steady_state(&self, v_a: &Vector2<f64>) -> Vector4<f64> {
        self.eq_map * v_a
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.previous = None;
        self.steps = 0;
    }

    /// QP for the current fast state.
    pub fn problem(&self, x0: &Vector4<f64>) -> QpProblem {
        let x0d = DVector::from_column_slice(x0.as_slice());
        let term_b = &self.terminal.x_a.g - &self.term_fx * &x0d;
        let a_in = crate::linalg::vstack(&[&self.a_in_fixed, &self.term_a]);
        let b_in = crate::linalg::vcat(&[&self.b_in_fixed, &term_b]);
        QpProblem {
            h: self.h.clone(),
            f: &self.f_x0 * &x0d + &self.f_const,
            a_eq: self.a_eq.clone(),
            b_eq: self.b_eq.clone(),
            a_in,
            b_in,
        }
    }

    /// Tracking cost of a decision vector, constant terms included.
    pub fn cost(&self, x0: &Vector4<f64>, z: &DVector<f64>) -> f64 {
        let qp = self.problem(x0);
        qp.objective(z) + x0.dot(&(self.c_x0 * x0)) + self.c_const
    }

    /// Predicted fast states `x_0 … x_N` for a decision vector.
    pub fn predict(&self, x0: &Vector4<f64>, z: &DVector<f64>) -> Vec<Vector4<f64>> {
        self.state_maps
            .iter()
            .zip(&self.a_powers)
            .map(|(s, ak)| {
                let sz = s * z;
                ak * x0 + Vector4::new(sz[0], sz[1], sz[2], sz[3])
            })
            .collect()
    }

    fn shifted_warm_start(&self, x0: &Vector4<f64>) -> Option<DVector<f64>> {
        let prev = self.previous.as_ref()?;
        let n_h = self.cfg.horizon;
        let mut z = prev.clone();
        for k in 0..n_h - 1 {
            z[2 * k] = prev[2 * k + 2];
            z[2 * k + 1] = prev[2 * k + 3];
        }
        let v_a = Vector2::new(prev[2 * n_h], prev[2 * n_h + 1]);
        // state reached after the N-1 shifted inputs
        let mut x = *x0;
        for k in 0..n_h - 1 {
            x = self.a * x + self.b * Vector2::new(z[2 * k], z[2 * k + 1]);
        }
        let tail = self.terminal.k * (x - self.steady_state(&v_a)) + v_a;
        z[2 * n_h - 2] = tail[0];
        z[2 * n_h - 1] = tail[1];
        Some(z)
    }

    pub fn control_step(&mut self, xf: &FastState, xs: &SlowState) -> Result<ControlOutput> {
        let step = self.steps;
        if xf.0.iter().chain(xs.0.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state at step {step}")));
        }
        let x0 = xf.0;
        let qp = self.problem(&x0);
        let warm = self.shifted_warm_start(&x0);
        let warm_ok = warm
            .as_ref()
            .is_some_and(|z| qp.max_violation(z) <= crate::qp::START_TOL);
        let sol = self.solver.solve(&qp, warm.as_ref())?;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                let report = match &sol.certificate {
                    Some(y) => {
                        let q = qp.a_in.nrows();
                        let rows: Vec<String> = (0..q)
                            .filter(|&i| y[i] > 1e-9)
                            .map(|i| format!("{} (weight {:.3e})", self.describe_row(i), y[i]))
                            .collect();
                        format!("conflicting constraints: {}", rows.join(", "))
                    }
                    None => "no certificate".into(),
                };
                return Err(Error::Infeasible { step, report });
            }
            QpStatus::MaxIter => {
                return Err(Error::SolverFailure {
                    step,
                    report: format!("{} iterations, KKT {:?}", sol.iterations, sol.kkt),
                })
            }
        }
        let n_h = self.cfg.horizon;
        let z = sol.z;
        let v0 = Vector2::new(z[0], z[1]);
        let v_a = Vector2::new(z[2 * n_h], z[2 * n_h + 1]);
        let x_a = self.steady_state(&v_a);
        let raw_u = v0 + self.gain.apply(xs);
        let clamped = !self.u_box.contains(&raw_u, 1e-12);
        let u = if clamped {
            log::warn!(
                "step {step}: applied input {:?} outside U, clamping",
                raw_u.as_slice()
            );
            self.u_box.clamp(&raw_u)
        } else {
            raw_u
        };
        let predicted_xf = self.predict(&x0, &z);
        let cost = sol.objective + x0.dot(&(self.c_x0 * x0)) + self.c_const;
        self.previous = Some(z);
        self.steps += 1;
        Ok(ControlOutput {
            u,
            v0,
            v_a,
            x_a,
            predicted_xf,
            cost,
            status: sol.status,
            clamped,
            iterations: sol.iterations,
            warm_started: warm_ok,
        })
    }

    fn describe_row(&self, i: usize) -> String {
        let n_h = self.cfg.horizon;
        if i < 4 * n_h {
            format!("V bound on v_{} row {}", i / 4, i % 4)
        } else if i < 4 * n_h + 4 {
            format!("Z_s bound row {}", i - 4 * n_h)
        } else {
            format!("terminal row {}", i - 4 * n_h - 4)
        }
    }

    /// Feedback gain of the terminal law.
    pub fn terminal_gain(&self) -> &Matrix2x4<f64> {
        &self.terminal.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyhedron;

    #[test]
    fn segment_of_unit_box() {
        let z = SteadyInputSet {
            g_eff: RowVector2::new(1.0, 1.0),
            c: 1.0,
            lower: Vector2::zeros(),
            upper: Vector2::new(1.0, 1.0),
        };
        let (a, b) = steady_segment(&z).unwrap();
        assert!((a - Vector2::new(0.0, 1.0)).amax() < 1e-15);
        assert!((b - Vector2::new(1.0, 0.0)).amax() < 1e-15);
        let empty = SteadyInputSet {
            c: 0.0,
            lower: Vector2::new(0.1, 0.1),
            ..z
        };
        assert!(matches!(
            steady_segment(&empty),
            Err(Error::EmptySteadySet(_))
        ));
    }

    #[test]
    fn ratio_offset_cost() {
        let vd = OffsetCost::ratio(10.0, 2.0);
        assert_eq!(vd.eval(&Vector2::new(1.0, 2.0)), 0.0);
        assert!((vd.eval(&Vector2::new(1.0, 0.0)) - 10.0).abs() < 1e-15);
        let z = SteadyInputSet {
            g_eff: RowVector2::new(1.0, 1.0),
            c: 3.0,
            lower: Vector2::zeros(),
            upper: Vector2::new(3.0, 3.0),
        };
        let v = z.offset_minimizer(&vd).unwrap();
        assert!((v - Vector2::new(1.0, 2.0)).amax() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = MpcConfig::default();
        c.validate().unwrap();
        c.lambda = 1.0;
        assert!(matches!(c.validate(), Err(Error::FiniteDetermination(_))));
        c.lambda = 0.99;
        c.r = Matrix2::zeros();
        assert!(c.validate().is_err());
    }

    #[test]
    fn dimensions_of_condensed_problem() {
        // decoupled toy model with a trivial terminal set
        let mut model = DiscreteDynamics {
            a_f: Matrix4::from_diagonal(&Vector4::new(0.9, 0.95, 0.9, 0.95)),
            a_s: Matrix4::zeros(),
            a_ss: Matrix4::identity(),
            a_sf: Matrix4::zeros(),
            b: Matrix4x2::zeros(),
            ts: 1.0,
        };
        model.a_f[(1, 0)] = 0.05;
        model.a_f[(3, 2)] = 0.05;
        model.b[(0, 0)] = 0.1;
        model.b[(2, 1)] = 0.1;
        let u = InputBox::new(Vector2::zeros(), Vector2::new(1.0, 1.0)).unwrap();
        let steady = SteadyOutput {
            g_eff: RowVector2::new(1.0, 1.0),
            c: 0.5,
        };
        let zs = SteadyInputSet::new(&steady, &u, 1e-6).unwrap();
        let cfg = MpcConfig::default();
        let terminal = TerminalIngredients {
            k: Matrix2x4::zeros(),
            p: Matrix4::identity(),
            psi: Matrix2::zeros(),
            a_w: crate::terminal::Matrix6::identity(),
            x_a: Polyhedron::from_box(&[-10.0; 6], &[10.0; 6]).unwrap(),
            lambda: 0.99,
            k_star: 0,
            dare_residual: 0.0,
        };
        let gain = CompensationGain {
            d: Matrix2x4::zeros(),
        };
        let ctrl = Controller::new(&model, gain, u, u, zs, terminal.clone(), cfg.clone()).unwrap();
        assert_eq!(ctrl.n_variables(), 50);
        assert_eq!(ctrl.n_box_rows(), 4 * 24 + 4);
        assert_eq!(ctrl.n_terminal_rows(), 12);
        let short = MpcConfig { horizon: 1, ..cfg };
        assert!(matches!(
            Controller::new(&model, gain, u, u, zs, terminal, short),
            Err(Error::Config(_))
        ));
    }
}

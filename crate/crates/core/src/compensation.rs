//! Slow-state compensation `u = v + D xs` and the input sets it induces.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::pkpd::{DiscreteDynamics, FastState, SlowState, SteadyOutput};

/// Gain cancelling the slow-state coupling: `A_s + B D = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensationGain {
    pub d: Matrix2x4<f64>,
}

impl CompensationGain {
    /// Correction term `m = D xs`.
    pub fn apply(&self, xs: &SlowState) -> Vector2<f64> {
        self.d * xs.0
    }
}

/// `D = -(BᵀB)⁻¹ Bᵀ A_s`. The sampling period cancels, so continuous and
/// discretized matrices give the same gain.
pub fn compensation_gain(b: &Matrix4x2<f64>, a_s: &Matrix4<f64>) -> Result<CompensationGain> {
    let btb: Matrix2<f64> = b.transpose() * b;
    let scale = btb.abs().max();
    if scale == 0.0 || btb.determinant().abs() <= 1e-12 * scale * scale {
        return Err(Error::Numerical("B does not have full column rank".into()));
    }
    let inv = btb
        .try_inverse()
        .ok_or_else(|| Error::Numerical("BᵀB is singular".into()))?;
    Ok(CompensationGain {
        d: -(inv * b.transpose() * a_s),
    })
}

/// Axis-aligned box of drug rates `[mg/s, µg/s]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBox {
    pub lower: Vector2<f64>,
    pub upper: Vector2<f64>,
}

impl InputBox {
    pub fn new(lower: Vector2<f64>, upper: Vector2<f64>) -> Result<Self> {
        if lower.iter().chain(upper.iter()).any(|x| !x.is_finite()) {
            return Err(Error::param("input bounds", "must be finite"));
        }
        if (0..2).any(|i| lower[i] > upper[i]) {
            return Err(Error::param(
                "input bounds",
                format!("lower {lower:?} exceeds upper {upper:?}"),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, u: &Vector2<f64>, tol: f64) -> bool {
        (0..2).all(|i| u[i] >= self.lower[i] - tol && u[i] <= self.upper[i] + tol)
    }

    pub fn clamp(&self, u: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            u[0].clamp(self.lower[0], self.upper[0]),
            u[1].clamp(self.lower[1], self.upper[1]),
        )
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.lower + self.upper) / 2.0
    }

    /// Box shrunk toward its center by factor `lambda`.
    pub fn scaled_about_center(&self, lambda: f64) -> InputBox {
        let c = self.center();
        InputBox {
            lower: c + (self.lower - c) * lambda,
            upper: c + (self.upper - c) * lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceBoundMode {
    /// Global equilibrium under the maximal input: every compartment at
    /// `u_max / Cl1`.
    WorstCase,
    /// Largest compensation term met while the compensated plant settles at
    /// the extreme admissible steady inputs (fixed point in `m̄`).
    Simulated,
    Fixed(Vector2<f64>),
}

/// Tolerance on the per-step state increment for the settling simulation.
pub const SETTLE_TOL: f64 = 1e-9;
pub const SETTLE_MAX_STEPS: usize = 1_000_000;

/// Componentwise bound `m̄` with `-m̄ ≤ D xs ≤ 0`.
///
/// `steady` and `epsilon` describe the admissible steady inputs and are used
/// only by [`DisturbanceBoundMode::Simulated`].
pub fn disturbance_bound(
    dynamics: &DiscreteDynamics,
    u: &InputBox,
    mode: DisturbanceBoundMode,
    steady: &SteadyOutput,
    epsilon: f64,
) -> Result<Vector2<f64>> {
    match mode {
        DisturbanceBoundMode::Fixed(m) => {
            if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::param("m_bar", "must be finite and nonnegative"));
            }
            Ok(m)
        }
        DisturbanceBoundMode::WorstCase => Ok(worst_case_bound(dynamics, u)),
        DisturbanceBoundMode::Simulated => simulated_bound(dynamics, u, steady, epsilon),
    }
}

/// `(Cl2 + Cl3) / Cl1 · u_max` per drug.
pub fn worst_case_bound(dynamics: &DiscreteDynamics, u: &InputBox) -> Vector2<f64> {
    let cont = dynamics.continuous();
    Vector2::from_fn(|i, _| {
        let r = 2 * i;
        let inter = cont.a_s[(r, r)] + cont.a_s[(r, r + 1)];
        let k10 = -cont.a_f[(r, r)] - inter;
        inter / k10 * u.upper[i].max(0.0)
    })
}

/// Runs the compensated plant `xf⁺ = A_f xf + B v`, `xs⁺ = A_ss xs + A_sf xf`
/// from rest under constant `v` until the state increment falls below
/// [`SETTLE_TOL`]; returns the componentwise max of `|D xs|` seen.
pub fn settle_compensation(
    dynamics: &DiscreteDynamics,
    gain: &CompensationGain,
    v: &Vector2<f64>,
) -> Result<Vector2<f64>> {
    let mut xf = FastState::zeros();
    let mut xs = SlowState::zeros();
    let mut peak: Vector2<f64> = Vector2::zeros();
    for step in 0..SETTLE_MAX_STEPS {
        let nf = dynamics.step_nominal(&xf, v);
        let ns = SlowState(dynamics.a_ss * xs.0 + dynamics.a_sf * xf.0);
        let inc = (nf.0 - xf.0).amax().max((ns.0 - xs.0).amax());
        xf = nf;
        xs = ns;
        let m = gain.apply(&xs).abs();
        peak = peak.sup(&m);
        if inc <= SETTLE_TOL && step > 0 {
            return Ok(peak);
        }
    }
    let inc = {
        let ns: Vector4<f64> = dynamics.a_ss * xs.0 + dynamics.a_sf * xf.0;
        (ns - xs.0).amax()
    };
    Err(Error::NonConvergentSimulation {
        steps: SETTLE_MAX_STEPS,
        residual: inc,
    })
}

fn simulated_bound(
    dynamics: &DiscreteDynamics,
    u: &InputBox,
    steady: &SteadyOutput,
    epsilon: f64,
) -> Result<Vector2<f64>> {
    let gain = compensation_gain(&dynamics.b, &dynamics.a_s)?;
    if u.upper.iter().all(|x| *x <= 0.0) {
        return Ok(Vector2::zeros());
    }
    let mut m = Vector2::zeros();
    for _ in 0..100 {
        let v = tracking_input_set(u, &m)?;
        let lower = v.lower.add_scalar(epsilon);
        let upper = v.upper.add_scalar(-epsilon);
        let (a, b) = segment_endpoints(&steady.g_eff.transpose(), steady.c, &lower, &upper)?;
        let v_extreme = a.sup(&b);
        let next = settle_compensation(dynamics, &gain, &v_extreme)?;
        if (next - m).amax() <= 1e-12 {
            return Ok(next);
        }
        m = next;
    }
    Err(Error::NonConvergentSimulation {
        steps: 100,
        residual: f64::NAN,
    })
}

/// Endpoints of `{v : gᵀv = c, lower ≤ v ≤ upper}` for `g > 0`, ordered by
/// increasing first component.
pub fn segment_endpoints(
    g: &Vector2<f64>,
    c: f64,
    lower: &Vector2<f64>,
    upper: &Vector2<f64>,
) -> Result<(Vector2<f64>, Vector2<f64>)> {
    if (0..2).any(|i| lower[i] > upper[i]) {
        return Err(Error::EmptySteadySet("steady input box is empty".into()));
    }
    if g[1].abs() <= f64::EPSILON * g[0].abs() {
        // vertical line v0 = c / g0
        let v0 = c / g[0];
        if v0 < lower[0] || v0 > upper[0] {
            return Err(Error::EmptySteadySet(format!(
                "line v0 = {v0} misses the box"
            )));
        }
        return Ok((Vector2::new(v0, lower[1]), Vector2::new(v0, upper[1])));
    }
    // parametrize by v0: v1 = (c - g0 v0) / g1
    let v1_of = |v0: f64| (c - g[0] * v0) / g[1];
    let v0_of = |v1: f64| (c - g[1] * v1) / g[0];
    let (mut lo, mut hi) = (lower[0], upper[0]);
    if g[0].abs() > 0.0 {
        let a = v0_of(lower[1]);
        let b = v0_of(upper[1]);
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    } else if v1_of(0.0) < lower[1] || v1_of(0.0) > upper[1] {
        return Err(Error::EmptySteadySet(
            "horizontal line misses the box".into(),
        ));
    }
    let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    if lo > hi + slack {
        return Err(Error::EmptySteadySet(format!(
            "segment g·v = {c} does not meet the box [{lower:?}, {upper:?}]"
        )));
    }
    let hi = hi.max(lo);
    Ok((Vector2::new(lo, v1_of(lo)), Vector2::new(hi, v1_of(hi))))
}

/// Pontryagin difference `U ⊖ {m : -m̄ ≤ m ≤ 0} = [u_min + m̄, u_max]`.
pub fn tracking_input_set(u: &InputBox, m_bar: &Vector2<f64>) -> Result<InputBox> {
    let lower = u.lower + m_bar;
    if (0..2).any(|i| lower[i] > u.upper[i]) {
        return Err(Error::EmptyInputSet(format!(
            "U = [{:?}, {:?}], m̄ = {:?}",
            u.lower.as_slice(),
            u.upper.as_slice(),
            m_bar.as_slice()
        )));
    }
    Ok(InputBox {
        lower,
        upper: u.upper,
    })
}

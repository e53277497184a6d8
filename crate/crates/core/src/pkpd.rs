//! Two-drug compartment dynamics and the Hill output map.
//!
//! State ordering is fixed throughout the crate:
//!
//! * fast state `(p1, p4, r1, r4)`: blood and effect-site concentration of
//!   propofol, then remifentanil;
//! * slow state `(p2, p3, r2, r3)`: muscle and fat concentration per drug;
//! * input `(u_p, u_r)` in mg/s and µg/s.
//!
//! Internally all rates are per second. Clinical tables (clearances in L/min,
//! `ke` in 1/min) go through [`DrugPkParams::from_clinical`].

use nalgebra::{Matrix2, Matrix4, Matrix4x2, RowVector2, RowVector4, SMatrix, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, to_dyn};

pub const FAST_LABELS: [&str; 4] = ["p1", "p4", "r1", "r4"];
pub const SLOW_LABELS: [&str; 4] = ["p2", "p3", "r2", "r3"];

/// Compartment parameters for one drug, in litres and per-second rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrugPkParams {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    /// Clearances in L/s.
    pub cl1: f64,
    pub cl2: f64,
    pub cl3: f64,
    /// Effect-site rate in 1/s.
    pub ke: f64,
}

impl DrugPkParams {
    pub fn new(v1: f64, v2: f64, v3: f64, cl1: f64, cl2: f64, cl3: f64, ke: f64) -> Result<Self> {
        let p = Self {
            v1,
            v2,
            v3,
            cl1,
            cl2,
            cl3,
            ke,
        };
        p.validate()?;
        Ok(p)
    }

    /// Volumes in L, clearances in L/min, `ke` in 1/min.
    pub fn from_clinical(
        v1: f64,
        v2: f64,
        v3: f64,
        cl1_per_min: f64,
        cl2_per_min: f64,
        cl3_per_min: f64,
        ke_per_min: f64,
    ) -> Result<Self> {
        Self::new(
            v1,
            v2,
            v3,
            cl1_per_min / 60.0,
            cl2_per_min / 60.0,
            cl3_per_min / 60.0,
            ke_per_min / 60.0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("V1", self.v1),
            ("V2", self.v2),
            ("V3", self.v3),
            ("Cl1", self.cl1),
            ("Cl2", self.cl2),
            ("Cl3", self.cl3),
            ("ke", self.ke),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::param(
                    name,
                    format!("must be strictly positive, got {value}"),
                ));
            }
        }
        Ok(())
    }

    pub fn k10(&self) -> f64 {
        self.cl1 / self.v1
    }
    pub fn k12(&self) -> f64 {
        self.cl2 / self.v1
    }
    pub fn k13(&self) -> f64 {
        self.cl3 / self.v1
    }
    pub fn k21(&self) -> f64 {
        self.cl2 / self.v2
    }
    pub fn k31(&self) -> f64 {
        self.cl3 / self.v3
    }
}

/// Additive propofol/remifentanil Hill surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdParams {
    pub e0: f64,
    pub emax: f64,
    pub gamma: f64,
    /// mg/L
    pub ce50p: f64,
    /// µg/L
    pub ce50r: f64,
}

impl PdParams {
    pub fn new(e0: f64, emax: f64, gamma: f64, ce50p: f64, ce50r: f64) -> Result<Self> {
        let p = Self {
            e0,
            emax,
            gamma,
            ce50p,
            ce50r,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e0.is_finite() && self.e0 > 0.0 && self.e0 <= 100.0) {
            return Err(Error::param(
                "E0",
                format!("must lie in (0, 100], got {}", self.e0),
            ));
        }
        for (name, value) in [
            ("Emax", self.emax),
            ("gamma", self.gamma),
            ("Ce50p", self.ce50p),
            ("Ce50r", self.ce50r),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::param(
                    name,
                    format!("must be strictly positive, got {value}"),
                ));
            }
        }
        Ok(())
    }

    /// Output row `G` mapping the fast state to the normalized combined
    /// concentration `U = p4/Ce50p + r4/Ce50r`.
    pub fn output_row(&self) -> RowVector4<f64> {
        RowVector4::new(0.0, 1.0 / self.ce50p, 0.0, 1.0 / self.ce50r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastState(pub Vector4<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowState(pub Vector4<f64>);

impl FastState {
    pub fn zeros() -> Self {
        Self(Vector4::zeros())
    }
}

impl SlowState {
    pub fn zeros() -> Self {
        Self(Vector4::zeros())
    }
}

/// Continuous-time matrices of
/// `ẋf = A_f xf + B u + A_s xs`, `ẋs = A_ss xs + A_sf xf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousDynamics {
    pub a_f: Matrix4<f64>,
    pub a_s: Matrix4<f64>,
    pub a_ss: Matrix4<f64>,
    pub a_sf: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
}

/// Euler-discretized counterpart, `x⁺ = A x + …` with `A = I + Ts·A_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDynamics {
    pub a_f: Matrix4<f64>,
    pub a_s: Matrix4<f64>,
    pub a_ss: Matrix4<f64>,
    pub a_sf: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub ts: f64,
}

fn set_block(m: &mut Matrix4<f64>, drug: usize, block: Matrix2<f64>) {
    m.fixed_view_mut::<2, 2>(2 * drug, 2 * drug)
        .copy_from(&block);
}

pub fn build_continuous(pk_p: &DrugPkParams, pk_r: &DrugPkParams) -> Result<ContinuousDynamics> {
    pk_p.validate()?;
    pk_r.validate()?;
    let mut a_f = Matrix4::zeros();
    let mut a_s = Matrix4::zeros();
    let mut a_ss = Matrix4::zeros();
    let mut a_sf = Matrix4::zeros();
    let mut b = Matrix4x2::zeros();
    for (i, pk) in [pk_p, pk_r].into_iter().enumerate() {
        set_block(
            &mut a_f,
            i,
            Matrix2::new(-(pk.k10() + pk.k12() + pk.k13()), 0.0, pk.ke, -pk.ke),
        );
        set_block(&mut a_s, i, Matrix2::new(pk.k12(), pk.k13(), 0.0, 0.0));
        set_block(&mut a_sf, i, Matrix2::new(pk.k21(), 0.0, pk.k31(), 0.0));
        set_block(&mut a_ss, i, Matrix2::new(-pk.k21(), 0.0, 0.0, -pk.k31()));
        b[(2 * i, i)] = 1.0 / pk.v1;
    }
    Ok(ContinuousDynamics {
        a_f,
        a_s,
        a_ss,
        a_sf,
        b,
    })
}

impl ContinuousDynamics {
    /// 8×8 generator on the stacked state `(xf, xs)`.
    pub fn full_matrix(&self) -> SMatrix<f64, 8, 8> {
        stack_full(&self.a_f, &self.a_s, &self.a_sf, &self.a_ss)
    }

    pub fn discretize_euler(&self, ts: f64) -> Result<DiscreteDynamics> {
        discretize_euler(self, ts)
    }
}

fn stack_full(
    a_f: &Matrix4<f64>,
    a_s: &Matrix4<f64>,
    a_sf: &Matrix4<f64>,
    a_ss: &Matrix4<f64>,
) -> SMatrix<f64, 8, 8> {
    let mut m = SMatrix::<f64, 8, 8>::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(a_f);
    m.fixed_view_mut::<4, 4>(0, 4).copy_from(a_s);
    m.fixed_view_mut::<4, 4>(4, 0).copy_from(a_sf);
    m.fixed_view_mut::<4, 4>(4, 4).copy_from(a_ss);
    m
}

pub fn discretize_euler(cont: &ContinuousDynamics, ts: f64) -> Result<DiscreteDynamics> {
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::param(
            "Ts",
            format!("must be strictly positive, got {ts}"),
        ));
    }
    let id = Matrix4::identity();
    let disc = DiscreteDynamics {
        a_f: id + cont.a_f * ts,
        a_s: cont.a_s * ts,
        a_ss: id + cont.a_ss * ts,
        a_sf: cont.a_sf * ts,
        b: cont.b * ts,
        ts,
    };
    let rho = spectral_radius(&to_dyn(&disc.a_f));
    if let Some(neg) = disc.a_f.iter().cloned().find(|&x| x < 0.0) {
        return Err(Error::UnstableDiscretization {
            ts,
            spectral_radius: rho,
            reason: format!("A_f,d has negative entry {neg}"),
        });
    }
    if rho >= 1.0 {
        return Err(Error::UnstableDiscretization {
            ts,
            spectral_radius: rho,
            reason: "A_f,d is not Schur stable".into(),
        });
    }
    Ok(disc)
}

impl DiscreteDynamics {
    pub fn full_matrix(&self) -> SMatrix<f64, 8, 8> {
        stack_full(&self.a_f, &self.a_s, &self.a_sf, &self.a_ss)
    }

    /// Recovers the continuous-time matrices (exact inverse of Euler).
    pub fn continuous(&self) -> ContinuousDynamics {
        let id = Matrix4::identity();
        ContinuousDynamics {
            a_f: (self.a_f - id) / self.ts,
            a_s: self.a_s / self.ts,
            a_ss: (self.a_ss - id) / self.ts,
            a_sf: self.a_sf / self.ts,
            b: self.b / self.ts,
        }
    }

    /// One step of the full 8-state model.
    pub fn step(&self, xf: &FastState, xs: &SlowState, u: &Vector2<f64>) -> (FastState, SlowState) {
        let f = self.a_f * xf.0 + self.b * u + self.a_s * xs.0;
        let s = self.a_ss * xs.0 + self.a_sf * xf.0;
        (FastState(f), SlowState(s))
    }

    /// One step of the nominal fast dynamics `x⁺ = A_f x + B v`.
    pub fn step_nominal(&self, xf: &FastState, v: &Vector2<f64>) -> FastState {
        FastState(self.a_f * xf.0 + self.b * v)
    }

    /// `(I - A_f)^{-1} B`: steady fast state per unit steady input.
    pub fn equilibrium_map(&self) -> Result<Matrix4x2<f64>> {
        let lu = (Matrix4::identity() - self.a_f).lu();
        lu.solve(&self.b)
            .ok_or_else(|| Error::Numerical("I - A_f,d is singular".into()))
    }
}

pub fn bis_output(xf: &FastState, pd: &PdParams) -> f64 {
    let u = xf.0[1] / pd.ce50p + xf.0[3] / pd.ce50r;
    let ug = u.max(0.0).powf(pd.gamma);
    pd.e0 - pd.emax * ug / (1.0 + ug)
}

/// Value of `U = p4/Ce50p + r4/Ce50r` producing `y_ref` at steady state.
pub fn hill_invert(y_ref: f64, pd: &PdParams) -> Result<f64> {
    let lower = pd.e0 - pd.emax;
    if !(y_ref.is_finite() && y_ref > lower && y_ref <= pd.e0) {
        return Err(Error::SetPointOutOfRange {
            y_ref,
            lower,
            upper: pd.e0,
        });
    }
    Ok(((pd.e0 - y_ref) / (pd.emax - pd.e0 + y_ref)).powf(1.0 / pd.gamma))
}

/// Affine steady-state output constraint `g_eff · v_a = c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOutput {
    pub g_eff: RowVector2<f64>,
    pub c: f64,
}

pub fn steady_output_row(
    disc: &DiscreteDynamics,
    pd: &PdParams,
    y_ref: f64,
) -> Result<SteadyOutput> {
    let c = hill_invert(y_ref, pd)?;
    let g_eff = pd.output_row() * disc.equilibrium_map()?;
    Ok(SteadyOutput { g_eff, c })
}

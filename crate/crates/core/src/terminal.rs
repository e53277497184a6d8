//! Terminal ingredients of the tracking MPC: Riccati weight and gain, the
//! extended `(x, v_a)` dynamics and the maximal admissible invariant set.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Matrix4, Matrix4x2, SMatrix};

use crate::compensation::InputBox;
use crate::error::{Error, Result};
use crate::geometry::{lp_max, LpStatus, Polyhedron, REDUNDANCY_TOL};
use crate::linalg::{from_dyn, max_abs, psd_sqrt, rank, spectral_radius, to_dyn, vstack};

pub type Matrix6 = SMatrix<f64, 6, 6>;

pub const DARE_STEP_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;
pub const INVARIANT_MAX_ITER: usize = 500;

#[derive(Debug, Clone)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    /// `A + B K` is Schur.
    pub k: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// `AᵀPA - P - AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q`, infinity norm.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let at = a.transpose();
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let Some(s_inv) = s.try_inverse() else {
        return f64::INFINITY;
    };
    let res = &at * p * a - p - &at * &pb * s_inv * pb.transpose() * a + q;
    max_abs(&res)
}

pub fn is_observable(c: &DMatrix<f64>, a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut cur = c.clone();
    for _ in 0..n {
        let next = &cur * a;
        blocks.push(cur);
        cur = next;
    }
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    rank(&vstack(&refs), 1e-10) == n
}

/// Fixed-point iteration of the Riccati recursion from `P₀ = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution> {
    let n = a.nrows();
    if a.ncols() != n
        || b.nrows() != n
        || q.shape() != (n, n)
        || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::Dimension(
            "DARE matrices have inconsistent shapes".into(),
        ));
    }
    if r.clone().cholesky().is_none() {
        return Err(Error::param("R", "must be symmetric positive definite"));
    }
    if !is_observable(&psd_sqrt(q), a) {
        return Err(Error::NotObservable);
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut step = f64::INFINITY;
    for it in 1..=DARE_MAX_ITER {
        let pb = &p * b;
        let s = r + &bt * &pb;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Numerical("R + BᵀPB singular".into()))?;
        let mut next = &at * &p * a - &at * &pb * s_inv * pb.transpose() * a + q;
        next = (&next + next.transpose()) * 0.5;
        step = max_abs(&(&next - &p));
        let scale = max_abs(&next).max(1.0);
        p = next;
        if !step.is_finite() {
            break;
        }
        if step <= DARE_STEP_TOL * scale {
            let s = r + &bt * &p * b;
            let k = -(s
                .try_inverse()
                .ok_or_else(|| Error::Numerical("R + BᵀPB singular".into()))?
                * &bt
                * &p
                * a);
            if p.clone().cholesky().is_none() {
                return Err(Error::Numerical(
                    "Riccati solution is not positive definite".into(),
                ));
            }
            let residual = dare_residual(a, b, q, r, &p);
            return Ok(DareSolution {
                p,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::RiccatiNonConvergence {
        iterations: DARE_MAX_ITER,
        step,
    })
}

/// Smallest `k` with `rank [B, AB, …, A^{k-1}B] = n`.
pub fn controllability_index(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    let n = a.nrows();
    // rows of the transposed Krylov matrix, one block per power of A
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut cur = b.clone();
    for k in 1..=n {
        blocks.push(cur.transpose());
        let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
        if rank(&vstack(&refs), 1e-10) == n {
            return Ok(k);
        }
        cur = a * cur;
    }
    Err(Error::NotControllable)
}

/// `A_w = [[A + BK, B(I - ψ)], [0, I]]` with `ψ = K (I - A)⁻¹ B`.
pub fn extended_dynamics(
    a: &Matrix4<f64>,
    b: &Matrix4x2<f64>,
    k: &Matrix2x4<f64>,
) -> Result<(Matrix6, Matrix2<f64>)> {
    let m = (Matrix4::identity() - a)
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("I - A singular".into()))?;
    let psi = k * m;
    let phi = a + b * k;
    let mut aw = Matrix6::zeros();
    aw.fixed_view_mut::<4, 4>(0, 0).copy_from(&phi);
    aw.fixed_view_mut::<4, 2>(0, 4)
        .copy_from(&(b * (Matrix2::identity() - psi)));
    aw.fixed_view_mut::<2, 2>(4, 4)
        .copy_from(&Matrix2::identity());
    Ok((aw, psi))
}

/// `{(x, v_a) : K x + (I - ψ) v_a ∈ V, v_a ∈ λV}`, with `λV` the box shrunk
/// about its center.
pub fn build_w_lambda(
    k: &Matrix2x4<f64>,
    psi: &Matrix2<f64>,
    v: &InputBox,
    lambda: f64,
) -> Result<Polyhedron> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::FiniteDetermination(format!(
            "λ = {lambda} must lie strictly inside (0, 1)"
        )));
    }
    if (0..2).any(|i| v.lower[i] > v.upper[i]) {
        return Err(Error::EmptyInputSet("V is empty".into()));
    }
    let shrunk = v.scaled_about_center(lambda);
    let ipsi = Matrix2::identity() - psi;
    let mut f = DMatrix::zeros(8, 6);
    let mut g = DVector::zeros(8);
    for i in 0..2 {
        for j in 0..4 {
            f[(2 * i, j)] = k[(i, j)];
            f[(2 * i + 1, j)] = -k[(i, j)];
        }
        for j in 0..2 {
            f[(2 * i, 4 + j)] = ipsi[(i, j)];
            f[(2 * i + 1, 4 + j)] = -ipsi[(i, j)];
        }
        g[2 * i] = v.upper[i];
        g[2 * i + 1] = -v.lower[i];
        f[(4 + 2 * i, 4 + i)] = 1.0;
        g[4 + 2 * i] = shrunk.upper[i];
        f[(4 + 2 * i + 1, 4 + i)] = -1.0;
        g[4 + 2 * i + 1] = -shrunk.lower[i];
    }
    Polyhedron::new(f, g)
}

#[derive(Debug, Clone)]
pub struct InvariantSet {
    pub set: Polyhedron,
    /// Number of propagation steps after which no new row was needed.
    pub k_star: usize,
}

/// `{w : F A^i w ≤ g, i = 0…k*}` where `k*` is the first index at which every
/// row of `F A^{k*+1}` is implied by the rows collected so far.
pub fn max_admissible_invariant_set(a: &DMatrix<f64>, w: &Polyhedron) -> Result<InvariantSet> {
    let n = w.dim();
    if a.shape() != (n, n) {
        return Err(Error::Dimension(
            "A_w does not match the constraint dimension".into(),
        ));
    }
    let mut set = w.clone();
    let mut power = a.clone();
    for i in 0..INVARIANT_MAX_ITER {
        let cand = &w.f * &power;
        let mut fresh: Vec<usize> = Vec::new();
        for r in 0..cand.nrows() {
            let row = cand.row(r).transpose();
            let nrm = row.norm();
            let implied = if nrm <= 1e-14 {
                w.g[r] >= -REDUNDANCY_TOL
            } else {
                let sol = lp_max(&row, &set)?;
                match sol.status {
                    LpStatus::Optimal => sol.value <= w.g[r] + REDUNDANCY_TOL * nrm,
                    LpStatus::Unbounded => false,
                    LpStatus::Infeasible => {
                        return Err(Error::InfeasibleSet("admissible set became empty".into()))
                    }
                }
            };
            if !implied {
                fresh.push(r);
            }
        }
        if fresh.is_empty() {
            return Ok(InvariantSet {
                set: set.remove_redundant()?,
                k_star: i,
            });
        }
        let mut add_f = DMatrix::zeros(fresh.len(), n);
        let mut add_g = DVector::zeros(fresh.len());
        for (j, &r) in fresh.iter().enumerate() {
            add_f.row_mut(j).copy_from(&cand.row(r));
            add_g[j] = w.g[r];
        }
        set = set.intersect(&Polyhedron::new(add_f, add_g)?)?;
        power = &power * a;
    }
    Err(Error::FiniteDetermination(format!(
        "no termination within {INVARIANT_MAX_ITER} iterations"
    )))
}

/// Everything the MPC needs beyond the model itself.
#[derive(Debug, Clone)]
pub struct TerminalIngredients {
    pub k: Matrix2x4<f64>,
    pub p: Matrix4<f64>,
    pub psi: Matrix2<f64>,
    pub a_w: Matrix6,
    pub x_a: Polyhedron,
    pub lambda: f64,
    pub k_star: usize,
    pub dare_residual: f64,
}

impl TerminalIngredients {
    pub fn compute(
        a: &Matrix4<f64>,
        b: &Matrix4x2<f64>,
        q: &Matrix4<f64>,
        r: &Matrix2<f64>,
        v: &InputBox,
        lambda: f64,
    ) -> Result<Self> {
        let mut t = Self::without_terminal_set(a, b, q, r, lambda)?;
        let w = build_w_lambda(&t.k, &t.psi, v, lambda)?;
        let inv = max_admissible_invariant_set(&to_dyn(&t.a_w), &w)?;
        t.x_a = inv.set;
        t.k_star = inv.k_star;
        Ok(t)
    }

    /// DARE solution and extended dynamics, with an empty placeholder for
    /// `X_a` to be filled by [`TerminalIngredients::with_terminal_set`].
    pub fn without_terminal_set(
        a: &Matrix4<f64>,
        b: &Matrix4x2<f64>,
        q: &Matrix4<f64>,
        r: &Matrix2<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::FiniteDetermination(format!(
                "lambda = {lambda} must lie strictly inside (0, 1)"
            )));
        }
        let dare = solve_dare(&to_dyn(a), &to_dyn(b), &to_dyn(q), &to_dyn(r))?;
        let k: Matrix2x4<f64> = from_dyn(&dare.k);
        let p: Matrix4<f64> = from_dyn(&dare.p);
        let rho = spectral_radius(&to_dyn(&(a + b * k)));
        if rho >= 1.0 {
            return Err(Error::Numerical(format!("A + BK not Schur (ρ = {rho})")));
        }
        let (a_w, psi) = extended_dynamics(a, b, &k)?;
        Ok(Self {
            k,
            p,
            psi,
            a_w,
            x_a: Polyhedron::new(DMatrix::zeros(0, 6), DVector::zeros(0))?,
            lambda,
            k_star: 0,
            dare_residual: dare.residual,
        })
    }

    /// Replaces the invariant set, e.g. with one loaded from a bundle.
    pub fn with_terminal_set(mut self, x_a: Polyhedron) -> Result<Self> {
        if x_a.dim() != 6 {
            return Err(Error::Dimension(format!(
                "X_a must live in R^6, got R^{}",
                x_a.dim()
            )));
        }
        self.x_a = x_a;
        Ok(self)
    }
}

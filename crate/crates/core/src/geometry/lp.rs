//! Dense two-phase simplex with Bland's rule.
//!
//! `max c·w  s.t.  F w ≤ g` (w free) is solved through its dual
//! `min g·y  s.t.  Fᵀ y = c, y ≥ 0`, whose tableau has only `n` rows. The
//! primal point is recovered from the optimal basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::Polyhedron;

pub const FEAS_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// `c·argmax` when optimal; `+∞` when unbounded, `-∞` when infeasible.
    pub value: f64,
    pub argmax: Option<DVector<f64>>,
    /// Dual multipliers, one per row of `F` (optimal only).
    pub dual: Option<DVector<f64>>,
}

enum StdOutcome {
    Optimal {
        y: DVector<f64>,
        basis: Vec<usize>,
    },
    /// `Fᵀ y = c, y ≥ 0` has no solution.
    Infeasible,
    /// Objective decreases without bound.
    Unbounded,
}

struct Tableau {
    m: usize,
    width: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        let prow: Vec<f64> = self.t[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * w + c];
            if f != 0.0 {
                for j in 0..w {
                    self.t[i * w + j] -= f * prow[j];
                }
                self.t[i * w + c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for j in 0..w {
                self.obj[j] -= f * prow[j];
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Bland's rule: lowest-index improving column, ties in the ratio test
    /// broken by lowest basic index. Returns `false` on unboundedness.
    fn run(&mut self, enter_limit: usize, pivots: &mut usize, cap: usize) -> Result<bool> {
        loop {
            let Some(c) = (0..enter_limit).find(|&j| self.obj[j] < -FEAS_TOL) else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-13
                                || (ratio <= br + 1e-13 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Ok(false);
            };
            self.pivot(r, c);
            *pivots += 1;
            if *pivots > cap {
                return Err(Error::LpIterationLimit(*pivots));
            }
        }
    }
}

/// `min cost·y  s.t.  a y = b, y ≥ 0` with `a` of shape `m × k`.
fn solve_standard(a: &DMatrix<f64>, b: &DVector<f64>, cost: &DVector<f64>) -> Result<StdOutcome> {
    let (m, k) = a.shape();
    let width = k + m + 1;
    let mut t = vec![0.0; m * width];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..k {
            t[i * width + j] = sign * a[(i, j)];
        }
        t[i * width + k + i] = 1.0;
        t[i * width + width - 1] = sign * b[i];
    }
    // phase 1: minimize the sum of artificials
    let mut obj = vec![0.0; width];
    for i in 0..m {
        for j in 0..k {
            obj[j] -= t[i * width + j];
        }
        obj[width - 1] -= t[i * width + width - 1];
    }
    let mut tab = Tableau {
        m,
        width,
        t,
        obj,
        basis: (k..k + m).collect(),
    };
    let cap = 50 * (k + m) + 1000;
    let mut pivots = 0;
    tab.run(k, &mut pivots, cap)?;
    let scale = 1.0 + b.amax();
    if -tab.obj[width - 1] > FEAS_TOL * scale {
        return Ok(StdOutcome::Infeasible);
    }
    // drive remaining artificials out of the basis where possible
    for i in 0..m {
        if tab.basis[i] >= k {
            if let Some(j) = (0..k).find(|&j| tab.at(i, j).abs() > 1e-9) {
                tab.pivot(i, j);
            }
        }
    }
    // phase 2
    let mut obj = vec![0.0; width];
    obj[..k].copy_from_slice(cost.as_slice());
    for i in 0..m {
        let bc = if tab.basis[i] < k {
            cost[tab.basis[i]]
        } else {
            0.0
        };
        if bc != 0.0 {
            for j in 0..width {
                obj[j] -= bc * tab.at(i, j);
            }
        }
    }
    tab.obj = obj;
    if !tab.run(k, &mut pivots, cap)? {
        return Ok(StdOutcome::Unbounded);
    }
    let mut y = DVector::zeros(k);
    let mut basis = Vec::new();
    for i in 0..m {
        if tab.basis[i] < k {
            y[tab.basis[i]] = tab.rhs(i).max(0.0);
            basis.push(tab.basis[i]);
        }
    }
    basis.sort_unstable();
    Ok(StdOutcome::Optimal { y, basis })
}

/// Rows scaled to unit norm; zero rows are dropped (or flagged infeasible).
pub(crate) fn normalized_rows(p: &Polyhedron) -> (DMatrix<f64>, DVector<f64>, Vec<usize>, bool) {
    let (k, n) = p.f.shape();
    let mut keep = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    let mut infeasible = false;
    for i in 0..k {
        let nrm = p.f.row(i).norm();
        if nrm > 1e-14 {
            keep.push(i);
            norms.push(nrm);
        } else if p.g[i] < -FEAS_TOL {
            infeasible = true;
        }
    }
    let mut f = DMatrix::zeros(keep.len(), n);
    let mut g = DVector::zeros(keep.len());
    for (r, (&i, &nrm)) in keep.iter().zip(&norms).enumerate() {
        f.row_mut(r).copy_from(&(p.f.row(i) / nrm));
        g[r] = p.g[i] / nrm;
    }
    (f, g, keep, infeasible)
}

fn recover_primal(f: &DMatrix<f64>, g: &DVector<f64>, basis: &[usize]) -> DVector<f64> {
    let n = f.ncols();
    if basis.is_empty() {
        return DVector::zeros(n);
    }
    let mut fb = DMatrix::zeros(basis.len(), n);
    let mut gb = DVector::zeros(basis.len());
    for (r, &i) in basis.iter().enumerate() {
        fb.row_mut(r).copy_from(&f.row(i));
        gb[r] = g[i];
    }
    if basis.len() == n {
        if let Some(x) = fb.clone().lu().solve(&gb) {
            return x;
        }
    }
    fb.svd(true, true)
        .solve(&gb, 1e-13)
        .unwrap_or_else(|_| DVector::zeros(n))
}

/// Maximizes `c·w` over the polyhedron.
pub fn lp_max(c: &DVector<f64>, p: &Polyhedron) -> Result<LpSolution> {
    let n = p.dim();
    if c.len() != n {
        return Err(Error::Dimension(format!(
            "objective has length {}, polyhedron dimension is {n}",
            c.len()
        )));
    }
    let (f, g, keep, zero_row_infeasible) = normalized_rows(p);
    if zero_row_infeasible {
        return Ok(infeasible_solution());
    }
    match solve_standard(&f.transpose(), c, &g)? {
        StdOutcome::Optimal { y, basis } => {
            let w = recover_primal(&f, &g, &basis);
            let mut dual = DVector::zeros(p.n_rows());
            for (r, &i) in keep.iter().enumerate() {
                dual[i] = y[r] / p.f.row(i).norm();
            }
            Ok(LpSolution {
                status: LpStatus::Optimal,
                value: c.dot(&w),
                argmax: Some(w),
                dual: Some(dual),
            })
        }
        StdOutcome::Unbounded => Ok(infeasible_solution()),
        StdOutcome::Infeasible => {
            // The dual is infeasible: primal is either infeasible or unbounded.
            match feasibility(p)? {
                Some(_) => Ok(LpSolution {
                    status: LpStatus::Unbounded,
                    value: f64::INFINITY,
                    argmax: None,
                    dual: None,
                }),
                None => Ok(infeasible_solution()),
            }
        }
    }
}

fn infeasible_solution() -> LpSolution {
    LpSolution {
        status: LpStatus::Infeasible,
        value: f64::NEG_INFINITY,
        argmax: None,
        dual: None,
    }
}

/// Result of minimizing the largest constraint violation.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub point: DVector<f64>,
    /// `max_i (F_i w - g_i)` at `point`, rows scaled to unit norm; `≤ 0` means
    /// feasible.
    pub max_violation: f64,
    /// Nonnegative row weights `y` with `Fᵀy ≈ 0`; when `max_violation > 0`,
    /// `g·y < 0` certifies infeasibility.
    pub certificate: DVector<f64>,
}

/// Solves `min t  s.t.  F_i w - t ≤ g_i (unit rows), t ≥ -1`.
pub fn min_violation(p: &Polyhedron) -> Result<FeasibilityReport> {
    let n = p.dim();
    let (f, g, keep, _) = normalized_rows(p);
    let k = f.nrows();
    let mut fa = DMatrix::zeros(k + 1, n + 1);
    fa.view_mut((0, 0), (k, n)).copy_from(&f);
    for i in 0..k {
        fa[(i, n)] = -1.0;
    }
    fa[(k, n)] = -1.0;
    let mut ga = DVector::zeros(k + 1);
    ga.rows_mut(0, k).copy_from(&g);
    ga[k] = 1.0;
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    match solve_standard(&fa.transpose(), &c, &ga)? {
        StdOutcome::Optimal { y, basis } => {
            let w = recover_primal(&fa, &ga, &basis);
            let mut cert = DVector::zeros(p.n_rows());
            for (r, &i) in keep.iter().enumerate() {
                cert[i] = y[r] / p.f.row(i).norm();
            }
            let mut max_violation = w[n];
            // zero rows with negative right-hand side
            for i in 0..p.n_rows() {
                if !keep.contains(&i) {
                    max_violation = max_violation.max(-p.g[i]);
                }
            }
            Ok(FeasibilityReport {
                point: w.rows(0, n).into_owned(),
                max_violation,
                certificate: cert,
            })
        }
        _ => Err(Error::Numerical(
            "feasibility LP is always solvable; simplex reported otherwise".into(),
        )),
    }
}

/// Some point of the polyhedron, or `None` if it is empty.
pub fn feasibility(p: &Polyhedron) -> Result<Option<DVector<f64>>> {
    let rep = min_violation(p)?;
    Ok((rep.max_violation <= FEAS_TOL).then_some(rep.point))
}

/// Center and radius of the largest inscribed ball (radius capped at `cap`).
pub fn chebyshev_center(p: &Polyhedron, cap: f64) -> Result<Option<(DVector<f64>, f64)>> {
    let n = p.dim();
    let (f, g, _, infeasible) = normalized_rows(p);
    if infeasible {
        return Ok(None);
    }
    let k = f.nrows();
    let mut fa = DMatrix::zeros(k + 1, n + 1);
    fa.view_mut((0, 0), (k, n)).copy_from(&f);
    for i in 0..k {
        fa[(i, n)] = 1.0;
    }
    fa[(k, n)] = 1.0;
    let mut ga = DVector::zeros(k + 1);
    ga.rows_mut(0, k).copy_from(&g);
    ga[k] = cap;
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let aug = Polyhedron { f: fa, g: ga };
    let sol = lp_max(&c, &aug)?;
    match (sol.status, sol.argmax) {
        (LpStatus::Optimal, Some(w)) if w[n] >= -FEAS_TOL => {
            Ok(Some((w.rows(0, n).into_owned(), w[n].max(0.0))))
        }
        _ => Ok(None),
    }
}

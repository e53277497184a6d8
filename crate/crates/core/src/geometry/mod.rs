//! H-representation polyhedra `{w : F w ≤ g}` and the LP machinery behind
//! membership, redundancy removal and invariant-set fixpoints.

mod io;
pub mod lp;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{vcat, vstack};

pub use io::{read_matrix, read_polyhedron, write_matrix, write_polyhedron};
pub use lp::{chebyshev_center, feasibility, lp_max, min_violation, LpSolution, LpStatus};

/// Tolerance used when deciding whether a row is implied by the others.
pub const REDUNDANCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub f: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl Polyhedron {
    pub fn new(f: DMatrix<f64>, g: DVector<f64>) -> Result<Self> {
        if f.nrows() != g.len() {
            return Err(Error::Dimension(format!(
                "F has {} rows but g has {} entries",
                f.nrows(),
                g.len()
            )));
        }
        if f.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical("polyhedron contains NaN or Inf".into()));
        }
        Ok(Self { f, g })
    }

    /// Axis-aligned box `lower ≤ w ≤ upper`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n {
            return Err(Error::Dimension("box bounds differ in length".into()));
        }
        let mut f = DMatrix::zeros(2 * n, n);
        let mut g = DVector::zeros(2 * n);
        for i in 0..n {
            f[(2 * i, i)] = 1.0;
            g[2 * i] = upper[i];
            f[(2 * i + 1, i)] = -1.0;
            g[2 * i + 1] = -lower[i];
        }
        Self::new(f, g)
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.f.nrows()
    }

    /// `F w ≤ g + tol` on every row.
    pub fn contains(&self, w: &DVector<f64>, tol: f64) -> bool {
        debug_assert_eq!(w.len(), self.dim());
        (&self.f * w - &self.g).iter().all(|&r| r <= tol)
    }

    /// Largest `F_i w - g_i` (negative inside).
    pub fn max_violation(&self, w: &DVector<f64>) -> f64 {
        (&self.f * w - &self.g)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn intersect(&self, other: &Polyhedron) -> Result<Polyhedron> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(
                "intersecting polyhedra of different dimension".into(),
            ));
        }
        Polyhedron::new(vstack(&[&self.f, &other.f]), vcat(&[&self.g, &other.g]))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Polyhedron {
        let mut f = DMatrix::zeros(rows.len(), self.dim());
        let mut g = DVector::zeros(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            f.row_mut(r).copy_from(&self.f.row(i));
            g[r] = self.g[i];
        }
        Polyhedron { f, g }
    }

    /// Whether `a·w ≤ b` holds on the whole polyhedron.
    pub fn implies(&self, a: &DVector<f64>, b: f64) -> Result<bool> {
        let nrm = a.norm();
        if nrm <= 1e-14 {
            return Ok(b >= -REDUNDANCY_TOL);
        }
        let sol = lp_max(a, self)?;
        Ok(match sol.status {
            LpStatus::Optimal => sol.value <= b + REDUNDANCY_TOL * nrm,
            LpStatus::Unbounded => false,
            LpStatus::Infeasible => true,
        })
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(feasibility(self)?.is_none())
    }

    /// Drops rows implied by the surviving ones, one pass in the given order.
    pub fn remove_redundant(&self) -> Result<Polyhedron> {
        if self.is_empty()? {
            return Err(Error::InfeasibleSet(
                "redundancy removal on an empty polyhedron".into(),
            ));
        }
        let mut alive: Vec<usize> = (0..self.n_rows()).collect();
        let mut pos = 0;
        while pos < alive.len() {
            let j = alive[pos];
            let others: Vec<usize> = alive.iter().cloned().filter(|&i| i != j).collect();
            let rest = self.select_rows(&others);
            let a = self.f.row(j).transpose();
            let redundant = if others.is_empty() {
                a.norm() <= 1e-14 && self.g[j] >= 0.0
            } else {
                rest.implies(&a, self.g[j])?
            };
            if redundant {
                alive.remove(pos);
            } else {
                pos += 1;
            }
        }
        Ok(self.select_rows(&alive))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_redundant_bound() {
        let p = Polyhedron::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        let r = p.remove_redundant().unwrap();
        assert_eq!(r.n_rows(), 1);
        assert_eq!(r.g[0], 1.0);
    }

    #[test]
    fn duplicates_collapse() {
        let b = Polyhedron::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let twice = b.intersect(&b).unwrap();
        assert_eq!(twice.remove_redundant().unwrap().n_rows(), 4);
    }

    #[test]
    fn boxes_with_redundant_cuts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=4 {
            let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..0.0)).collect();
            let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            let bx = Polyhedron::from_box(&lower, &upper).unwrap();
            // cuts a·w ≤ b with b strictly above the box's support value
            let mut f = DMatrix::zeros(10, n);
            let mut g = DVector::zeros(10);
            for r in 0..10 {
                let mut support = 0.0;
                for i in 0..n {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    f[(r, i)] = a;
                    support += if a > 0.0 { a * upper[i] } else { a * lower[i] };
                }
                g[r] = support + rng.gen_range(0.01..1.0);
            }
            let cuts = Polyhedron::new(f, g).unwrap();
            let all = cuts.intersect(&bx).unwrap();
            let reduced = all.remove_redundant().unwrap();
            assert_eq!(reduced.n_rows(), 2 * n, "n = {n}");
            assert_eq!(reduced, bx);
        }
    }

    #[test]
    fn removal_is_idempotent_and_preserves_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 3;
        let k = 25;
        let f = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
        let g = DVector::from_fn(k, |_, _| rng.gen_range(0.5..1.5));
        let p = Polyhedron::new(f, g).unwrap();
        let once = p.remove_redundant().unwrap();
        let twice = once.remove_redundant().unwrap();
        assert_eq!(once, twice);
        for _ in 0..2000 {
            let w = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            assert_eq!(p.contains(&w, 0.0), once.contains(&w, 0.0));
        }
    }

    #[test]
    fn empty_polyhedron_is_an_error() {
        let p = Polyhedron::from_box(&[1.0], &[0.0]).unwrap();
        assert!(matches!(p.remove_redundant(), Err(Error::InfeasibleSet(_))));
    }

    #[test]
    fn membership() {
        let b = Polyhedron::from_box(&[-1.0; 3], &[1.0; 3]).unwrap();
        assert!(b.contains(&DVector::zeros(3), 0.0));
        assert!(!b.contains(&DVector::from_vec(vec![2.0, 0.0, 0.0]), 0.0));
        assert!(b.contains(&DVector::from_vec(vec![1.0 + 5e-10, 0.0, 0.0]), 1e-9));
    }

    #[test]
    fn rejects_malformed() {
        assert!(Polyhedron::new(DMatrix::zeros(2, 2), DVector::zeros(3)).is_err());
        assert!(Polyhedron::new(DMatrix::from_element(1, 1, f64::NAN), DVector::zeros(1)).is_err());
    }
}

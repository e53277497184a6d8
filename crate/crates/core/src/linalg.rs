//! Small dense linear-algebra helpers shared by the controller modules.

use nalgebra::{DMatrix, DVector, SMatrix};

pub fn to_dyn<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Panics if the shapes disagree; callers own the shape invariant.
pub fn from_dyn<const R: usize, const C: usize>(m: &DMatrix<f64>) -> SMatrix<f64, R, C> {
    assert_eq!(m.shape(), (R, C), "from_dyn shape mismatch");
    SMatrix::<f64, R, C>::from_column_slice(m.as_slice())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Numerical rank from singular values, relative tolerance.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Largest magnitude among entries coupling the two drugs, for matrices whose
/// rows and columns split into two equal halves (one per drug).
pub fn cross_block_max<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> f64 {
    let (hr, hc) = (R / 2, C / 2);
    let mut worst = 0.0_f64;
    for i in 0..R {
        for j in 0..C {
            if (i < hr) != (j < hc) {
                worst = worst.max(m[(i, j)].abs());
            }
        }
    }
    worst
}

pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks
        .iter()
        .find(|b| b.nrows() > 0)
        .or(blocks.first())
        .map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        if b.nrows() == 0 {
            continue;
        }
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

pub fn vcat(parts: &[&DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        parts.iter().map(|p| p.len()).sum(),
        parts.iter().flat_map(|p| p.iter().cloned()),
    )
}

/// Symmetric square root of a symmetric positive semidefinite matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Row-major fill so the draw order does not depend on nalgebra's layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

pub fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample(StandardNormal)))
}

/// A Haar-random `rows x cols` matrix with orthonormal columns.
pub fn random_orthonormal<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if cols > rows {
        return Err(Error::InvalidDimension(format!(
            "cannot fit {cols} orthonormal columns in dimension {rows}"
        )));
    }
    if cols == 0 {
        return Ok(DMatrix::zeros(rows, 0));
    }
    let g = gaussian_matrix(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign fix makes the distribution Haar.
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `ln det` of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} block", m.nrows(), m.ncols())))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!("{}x{} block", m.nrows(), m.ncols())))?;
    Ok(chol.inverse())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Whitening basis of the range of a PSD matrix: returns `P` (`n x r`) with
/// `P^T M P = I_r`, dropping eigenvalues below `rel_tol * max_eig`.
pub fn range_whitener(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > rel_tol * max_eig && eig.eigenvalues[i] > 0.0)
        .collect();
    let mut p = DMatrix::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let scale = 1.0 / eig.eigenvalues[i].sqrt();
        p.set_column(c, &(eig.eigenvectors.column(i) * scale));
    }
    p
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn psd_pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let w = range_whitener(m, rel_tol);
    &w * w.transpose()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

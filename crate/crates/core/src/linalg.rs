//! Small dense helpers on top of nalgebra.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

static SPD_INVERSIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of SPD inversions performed by this process so far.
///
/// Only `M†(t)` is ever inverted; diffusion matrices `σσᵀ` never are. The
/// counter lets callers audit that.
pub fn spd_inversions() -> usize {
    SPD_INVERSIONS.load(Ordering::Relaxed)
}

/// Jitters tried in turn when the Cholesky factorisation fails.
pub const JITTER_LADDER: [f64; 3] = [0.0, 1e-12, 1e-10];

/// Inverse of a symmetric positive-definite matrix with jitter escalation.
///
/// Returns the smallest diagonal entry of the last attempted factor on failure.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    SPD_INVERSIONS.fetch_add(1, Ordering::Relaxed);
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let mut pivot = f64::NAN;
    for jitter in JITTER_LADDER {
        let shifted = &sym + DMatrix::<f64>::identity(n, n) * jitter;
        if let Some(chol) = shifted.clone().cholesky() {
            let l = chol.l();
            pivot = l.diagonal().min();
            if pivot > 0.0 && pivot.is_finite() {
                let inv = chol.inverse();
                return Ok((&inv + inv.transpose()) * 0.5);
            }
        }
    }
    Err(pivot)
}

/// Row-major copy of a matrix.
pub fn to_row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out.push(a[(i, j)]);
        }
    }
    out
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

pub fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

pub fn sym_min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Numerical rank from singular values.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let tol = sv.max() * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_spd() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&a).unwrap();
        let prod = &a * &inv;
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn singular_fails_after_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]) * -1.0;
        assert!(spd_inverse(&a).is_err());
    }

    #[test]
    fn tiny_semidefinite_rescued_by_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(spd_inverse(&a).is_ok());
    }

    #[test]
    fn rank_detection() {
        assert_eq!(rank(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0])), 1);
        assert_eq!(rank(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])), 1);
        assert_eq!(rank(&DMatrix::<f64>::identity(3, 3)), 3);
    }
}

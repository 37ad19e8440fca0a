//! Small dense helpers for symmetric positive definite matrices.
//!
//! Covariances and kernel matrices in this workspace are desk-scale, so a
//! plain Cholesky factorization covers sampling, density evaluation, and
//! positive-definiteness checks.

use ndarray::{Array1, Array2, ArrayView1};

use crate::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = a`.
///
/// Fails when `a` is not (numerically) symmetric positive definite.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Input(format!(
            "cholesky requires a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::Numeric(format!(
                        "matrix is not positive definite at pivot {i} (value {sum})"
                    )));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    assert_eq!(b.len(), n, "dimension mismatch in triangular solve");
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    y
}

//! Small dense helpers on top of nalgebra.

use alloc::format;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;

use crate::{Error, Result};

/// Upper Cholesky factor `R` with `RᵀR = A`.
///
/// Fails with [`Error::RankDeficient`] when a pivot falls below
/// `rel_tol * max(diag(A))`.
pub(crate) fn chol_upper(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Shape(format!("{}x{} is not square", n, a.ncols())));
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut r = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= r[(k, j)] * r[(k, j)];
        }
        if !(d > rel_tol * scale) {
            return Err(Error::RankDeficient { column: j, pivot: d });
        }
        let rjj = d.sqrt();
        r[(j, j)] = rjj;
        for i in (j + 1)..n {
            let mut s = a[(j, i)];
            for k in 0..j {
                s -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = s / rjj;
        }
    }
    Ok(r)
}

/// Solves `Rᵀ x = b` for upper-triangular `R`.
pub(crate) fn solve_upper_transpose(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= r[(k, i)] * x[k];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Solves `R x = b` for upper-triangular `R`.
pub(crate) fn solve_upper(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= r[(i, k)] * x[k];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Solves `Rᵀ X = B` column by column.
pub(crate) fn solve_upper_transpose_mat(r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    for c in 0..b.ncols() {
        let col = solve_upper_transpose(r, &b.column(c).into_owned());
        out.set_column(c, &col);
    }
    out
}

/// Solves `R X = B` column by column.
pub(crate) fn solve_upper_mat(r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    for c in 0..b.ncols() {
        let col = solve_upper(r, &b.column(c).into_owned());
        out.set_column(c, &col);
    }
    out
}

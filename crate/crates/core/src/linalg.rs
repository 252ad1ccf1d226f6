//! Small dense kernels: a lower-triangular Cholesky with a scale-free pivot
//! test, triangular solves and inverse diagonals.
//!
//! Convention throughout the crate: `H = L Lᵀ` with `L` lower triangular.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivots must exceed this fraction of `trace / n` to count as positive.
pub const PIVOT_RELATIVE_TOL: f64 = 1e-12;

/// Cholesky factor `L` of a symmetric matrix, or an error when some pivot
/// falls below `PIVOT_RELATIVE_TOL · trace / n`.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Shape(format!("cholesky of a {} x {} matrix", n, a.ncols())));
    }
    let trace = a.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::NotPositiveDefinite(format!("trace {trace}")));
    }
    let threshold = PIVOT_RELATIVE_TOL * trace / n as f64;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > threshold) {
            return Err(Error::NotPositiveDefinite(format!("pivot {j} is {d:e} (threshold {threshold:e})")));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L x = b` in place by forward substitution.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `Lᵀ x = b` in place by back substitution.
pub fn solve_lower_transpose_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `L Lᵀ x = b` given the factor.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    solve_lower_in_place(l, &mut x);
    solve_lower_transpose_in_place(l, &mut x);
    x
}

/// Diagonal of `(L Lᵀ)⁻¹`, one pair of triangular solves per unit vector.
pub fn inverse_diagonal(l: &DMatrix<f64>) -> Vec<f64> {
    let n = l.nrows();
    (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            // ‖L⁻¹ e_j‖² = e_jᵀ (L Lᵀ)⁻¹ e_j
            solve_lower_in_place(l, &mut e);
            e.iter().map(|v| v * v).sum()
        })
        .collect()
}

/// `(L Lᵀ)⁻¹` assembled column by column.
pub fn inverse_from_cholesky(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = cholesky_solve(l, &e);
        inv.set_column(j, &DVector::from_vec(col));
    }
    inv
}

/// `Lᵀ v` for a lower-triangular `L`.
pub fn lower_transpose_mul(l: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    (0..n).map(|i| (i..n).map(|k| l[(k, i)] * v[k]).sum()).collect()
}

/// `L v` for a lower-triangular `L`.
pub fn lower_mul(l: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    (0..n).map(|i| (0..=i).map(|k| l[(i, k)] * v[k]).sum()).collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

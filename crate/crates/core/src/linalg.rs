//! Small dense-linear-algebra helpers shared across the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices. Solves are dense
//! LU with partial pivoting; the intended scale is |S||A| up to a few
//! thousand.

use nalgebra::{DMatrix, DVector};

use crate::error::{OpeError, Result};

/// Solves `a x = b` by LU with partial pivoting.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    lu.solve(b).ok_or_else(|| OpeError::Singular {
        context: context.to_string(),
        cond: condition_estimate(a),
    })
}

/// Solves `a X = B` for a matrix right-hand side.
pub fn lu_solve_mat(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let lu = a.clone().lu();
    lu.solve(b).ok_or_else(|| OpeError::Singular {
        context: context.to_string(),
        cond: condition_estimate(a),
    })
}

/// Two-norm condition number from the SVD, `inf` for a rank-deficient matrix.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest and largest singular values of `a`.
pub fn singular_value_range(a: &DMatrix<f64>) -> (f64, f64) {
    let sv = a.clone().svd(false, false).singular_values;
    (sv.min(), sv.max())
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn svd_lsq(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    svd.solve(b, 1e-13).map_err(|_| OpeError::Singular {
        context: context.to_string(),
        cond: condition_estimate(a),
    })
}

/// Weighted Gram matrix `phi^T diag(x) phi`.
pub fn weighted_gram(phi: &DMatrix<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let weighted = scale_rows(phi, x);
    phi.transpose() * weighted
}

/// Returns `diag(x) * a` without materialising the diagonal matrix.
pub fn scale_rows(a: &DMatrix<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= x[i];
    }
    out
}

/// x-weighted inner product `sum_i x_i f_i g_i`.
pub fn inner_x(f: &DVector<f64>, g: &DVector<f64>, x: &DVector<f64>) -> f64 {
    f.iter()
        .zip(g.iter())
        .zip(x.iter())
        .map(|((fi, gi), xi)| xi * fi * gi)
        .sum()
}

/// x-weighted two-norm.
pub fn norm_x(f: &DVector<f64>, x: &DVector<f64>) -> f64 {
    inner_x(f, f, x).max(0.0).sqrt()
}

/// Coefficients of the x-weighted least-squares projection of `v` onto the
/// span of the columns of `phi`: `argmin_b ||v - phi b||_x`.
pub fn weighted_projection_coeffs(
    phi: &DMatrix<f64>,
    v: &DVector<f64>,
    x: &DVector<f64>,
    context: &str,
) -> Result<DVector<f64>> {
    let gram = weighted_gram(phi, x);
    let rhs = phi.transpose() * component_mul(x, v);
    lu_solve(&gram, &rhs, context)
}

fn component_mul(x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| x[i] * v[i])
}

/// Inverse symmetric square root of a symmetric positive-definite matrix,
/// with eigenvalues floored at `floor` before inversion.
pub fn sym_inv_sqrt(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = nalgebra::SymmetricEigen::new(a.clone());
    let mut scaled = sym.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        let lam = sym.eigenvalues[j].max(floor);
        col /= lam.sqrt();
    }
    &scaled * sym.eigenvectors.transpose()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig_sym(a: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(a.clone()).eigenvalues.max()
}

/// Largest singular value of `a` by power iteration on `a^T a`.
///
/// Deterministic: starts from the all-ones direction and runs to a fixed
/// point (or 10_000 iterations).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0_f64;
    for _ in 0..10_000 {
        let av = a * &v;
        let next = a.transpose() * av;
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let new_sigma = norm.sqrt();
        let diff = (new_sigma - sigma).abs();
        sigma = new_sigma;
        v = next / norm;
        if diff <= 1e-13 * sigma.max(1.0) {
            break;
        }
    }
    sigma
}

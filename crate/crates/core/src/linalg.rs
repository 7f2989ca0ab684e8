//! Dense Cholesky helpers shared by the variational engine and the baselines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-4;

/// Lower Cholesky factor of `k + jitter * I`, escalating the jitter by 10x
/// up to [`MAX_JITTER`] when the factorization fails. Returns the factor and
/// the jitter that was used.
pub fn cholesky_jittered(k: &DMatrix<f64>, base_jitter: f64, name: &str) -> Result<(DMatrix<f64>, f64)> {
    assert!(k.is_square());
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(name, "matrix has non-finite entries"));
    }
    let mut jitter = base_jitter.max(0.0);
    loop {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            let l = c.unpack();
            if (0..l.nrows()).all(|i| l[(i, i)] > 0.0) {
                return Ok((l, jitter));
            }
        }
        if jitter >= MAX_JITTER {
            return Err(Error::numerical(
                name,
                format!("Cholesky factorization failed with jitter up to {MAX_JITTER:e}"),
            ));
        }
        jitter = if jitter == 0.0 { DEFAULT_JITTER } else { (jitter * 10.0).min(MAX_JITTER) };
    }
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor with non-zero diagonal")
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor with non-zero diagonal")
}

/// Solves `L^T X = B` for lower-triangular `L`.
pub fn solve_lower_t(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("triangular factor with non-zero diagonal")
}

pub fn solve_lower_t_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.tr_solve_lower_triangular(b)
        .expect("triangular factor with non-zero diagonal")
}

/// `K^{-1} b` given the lower factor of `K`.
pub fn chol_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_t_vec(l, &solve_lower_vec(l, b))
}

pub fn chol_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    solve_lower_t(l, &solve_lower(l, b))
}

/// log det(L L^T).
pub fn log_det_chol(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Reverse-mode step through `L = chol(K)`: given dE/dL (only the lower
/// triangle is read) returns the symmetric dE/dK.
pub fn cholesky_backward(l: &DMatrix<f64>, l_bar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut lbar = l_bar.clone();
    lbar.fill_upper_triangle(0.0, 1);
    let mut p = l.transpose() * &lbar;
    // Φ: lower triangle with halved diagonal
    p.fill_upper_triangle(0.0, 1);
    for i in 0..n {
        p[(i, i)] *= 0.5;
    }
    // L^{-T} P L^{-1}
    let x = solve_lower_t(l, &p);
    let g = solve_lower_t(l, &x.transpose()).transpose();
    (&g + g.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(k: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(k.clone());
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Solves a symmetric positive-definite system `(A + ridge I) x = b`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += ridge;
    }
    Cholesky::<f64, Dyn>::new(m).map(|c| c.solve(b))
}

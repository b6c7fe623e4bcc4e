//! Small dense linear-algebra helpers shared across modules.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TfclError};

/// Seed for the start vector of every power iteration in the crate.
pub const POWER_ITERATION_SEED: u64 = 0x7fc1;

pub fn to_faer(a: ArrayView2<f64>) -> Mat<f64> {
    let (r, c) = a.dim();
    Mat::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn from_faer(m: faer::MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(a: ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn all_finite(a: ArrayView2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Largest absolute asymmetry `|a_ij - a_ji|`.
pub fn asymmetry(a: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

/// Largest eigenvalue of the PSD operator `v -> apply(v)` by power iteration.
///
/// Stops when the Rayleigh estimate changes by less than `tol` (relative) or
/// after `max_iter` steps. The start vector is drawn from a fixed seed so the
/// result is reproducible.
pub fn power_iteration<F>(dim: usize, apply: F, tol: f64, max_iter: usize) -> f64
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut v: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.random::<f64>() + 0.5);
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = apply(v.view());
        let next = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if (next - estimate).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return next.max(wn);
        }
        estimate = next;
    }
    estimate
}

/// Spectral norm squared `||X||_2^2 = lambda_max(X^T X)` by power iteration.
pub fn spectral_norm_sq(x: ArrayView2<f64>) -> f64 {
    power_iteration(x.ncols(), |v| x.t().dot(&x.dot(&v)), 1e-10, 2000)
}

/// Solves `(A^T A + ridge I) w = A^T b` by Cholesky.
pub fn ridge_solve(a: ArrayView2<f64>, b: ArrayView1<f64>, ridge: f64) -> Result<Array1<f64>> {
    let d = a.ncols();
    let mut gram = a.t().dot(&a);
    for i in 0..d {
        gram[[i, i]] += ridge;
    }
    let rhs = a.t().dot(&b);
    solve_spd(gram.view(), rhs.view())
}

/// Solves `M x = r` for symmetric positive definite `M`.
pub fn solve_spd(m: ArrayView2<f64>, r: ArrayView1<f64>) -> Result<Array1<f64>> {
    let chol = to_faer(m)
        .llt(Side::Lower)
        .map_err(|_| TfclError::Degenerate("matrix is not positive definite".into()))?;
    let rhs = Mat::from_fn(r.len(), 1, |i, _| r[i]);
    let sol = chol.solve(&rhs);
    Ok(Array1::from_shape_fn(r.len(), |i| sol[(i, 0)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn power_iteration_on_diagonal() {
        let a = array![[3.0, 0.0], [0.0, 1.0]];
        let top = power_iteration(2, |v| a.dot(&v), 1e-12, 1000);
        assert!((top - 3.0).abs() < 1e-8);
    }

    #[test]
    fn ridge_solve_identity() {
        let a = Array2::<f64>::eye(3);
        let b = array![1.0, 2.0, 3.0];
        let w = ridge_solve(a.view(), b.view(), 1.0).unwrap();
        for (wi, bi) in w.iter().zip(b.iter()) {
            assert!((wi - bi / 2.0).abs() < 1e-12);
        }
    }
}

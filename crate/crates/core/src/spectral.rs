//! Dense symmetric eigendecomposition and the closed-form U-update.
//!
//! The U-update minimizes `<L, U> + mu ||U||_F^2` over
//! `{U symmetric : 0 <= U <= I, tr U = k}`. For every `mu` below the eigengap
//! bound the minimizer is the same matrix: a unit weight on eigenvectors
//! strictly below the eigenvalue cluster containing `lambda_k`, a shared
//! fractional weight `(k - p) / (q - p)` across that whole cluster, and zero
//! above it. Because the whole tied eigenspace is weighted uniformly, the
//! result does not depend on which orthonormal basis the eigensolver returns
//! for it.

use faer::Side;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::bipartite::BipartiteLaplacian;
use crate::error::{Result, TfclError};
use crate::linalg;

/// Default relative tolerance for treating two eigenvalues as tied.
pub const DEFAULT_GAP_TOL: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-9;

/// Ascending eigenvalues with column-orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn sym_eig(a: ArrayView2<f64>) -> Result<EigenSystem> {
    let (n, m) = a.dim();
    if n != m || n == 0 {
        return Err(TfclError::DimensionMismatch(format!(
            "expected a non-empty square matrix, got {n}x{m}"
        )));
    }
    if !linalg::all_finite(a) {
        return Err(TfclError::InvalidInput(
            "matrix has non-finite entries".into(),
        ));
    }
    let scale = linalg::max_abs(a).max(1.0);
    if linalg::asymmetry(a) > SYMMETRY_TOL * scale {
        return Err(TfclError::InvalidInput("matrix is not symmetric".into()));
    }
    // exact symmetrization so the solver sees a symmetric input
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| TfclError::Eigen(format!("{n}x{n} matrix: {e:?}")))?;
    let (s, v) = (eig.S(), eig.U());
    if (0..n).any(|i| !s[i].is_finite()) {
        return Err(TfclError::Eigen(format!(
            "non-finite eigenvalues for {n}x{n} matrix"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    let values = Array1::from_iter(order.iter().map(|&i| s[i]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[(r, order[c])]);
    Ok(EigenSystem { values, vectors })
}

/// Sum of the `k` smallest eigenvalues.
pub fn truncated_eig_sum(a: ArrayView2<f64>, k: usize) -> Result<f64> {
    let n = a.nrows();
    if k == 0 || k > n {
        return Err(TfclError::InvalidInput(format!(
            "k must lie in 1..={n}, got {k}"
        )));
    }
    let eig = sym_eig(a)?;
    Ok(eig.values.slice(s![..k]).sum())
}

/// Closed-form solution of the U-subproblem.
#[derive(Debug, Clone)]
pub struct SpectralSolution {
    pub u: Array2<f64>,
    /// Weight on each eigenvector, in eigenvalue order.
    pub c: Array1<f64>,
    /// Number of eigenvalues strictly below the cluster containing `lambda_k`.
    pub p: usize,
    /// Index of the last eigenvalue in that cluster.
    pub q: usize,
    /// `min(lambda_{p+1} - lambda_p, lambda_{q+1} - lambda_q)`; either gap
    /// is `+inf` when there is no eigenvalue on that side.
    pub breve_delta: f64,
    pub k: usize,
    pub eig: EigenSystem,
}

impl SpectralSolution {
    /// `sum_{i<=k} lambda_i`, which equals `<A, U>` at the optimum.
    pub fn eig_sum(&self) -> f64 {
        self.eig.values.slice(s![..self.k]).sum()
    }

    /// `lambda_{k+1}` (1-based), if it exists.
    pub fn lambda_next(&self) -> Option<f64> {
        self.eig.values.get(self.k).copied()
    }

    pub fn lambda_k(&self) -> f64 {
        self.eig.values[self.k - 1]
    }

    /// Bottom-`k` eigenvector block.
    pub fn bottom_vectors(&self) -> Array2<f64> {
        self.eig.vectors.slice(s![.., ..self.k]).to_owned()
    }
}

pub fn u_update(l: &BipartiteLaplacian, k: usize, gap_tol: f64) -> Result<SpectralSolution> {
    if l.is_zero() {
        return Err(TfclError::Degenerate(
            "U-update requires a nonzero Laplacian".into(),
        ));
    }
    u_update_matrix(l.matrix(), k, gap_tol)
}

/// U-update for an arbitrary nonzero symmetric matrix.
pub fn u_update_matrix(a: ArrayView2<f64>, k: usize, gap_tol: f64) -> Result<SpectralSolution> {
    let n = a.nrows();
    if k == 0 || k >= n {
        return Err(TfclError::InvalidInput(format!(
            "k must lie in 1..{n}, got {k}"
        )));
    }
    if !(gap_tol > 0.0) {
        return Err(TfclError::InvalidInput(format!(
            "gap_tol must be > 0, got {gap_tol}"
        )));
    }
    if a.iter().all(|v| *v == 0.0) {
        return Err(TfclError::Degenerate(
            "U-update requires a nonzero matrix".into(),
        ));
    }
    let eig = sym_eig(a)?;
    Ok(assemble(eig, k, gap_tol))
}

/// Builds the solution from a precomputed eigensystem.
pub fn assemble(eig: EigenSystem, k: usize, gap_tol: f64) -> SpectralSolution {
    let n = eig.len();
    let lam = &eig.values;
    // 1-based lambda_i is lam[i - 1]
    let tie = gap_tol * (1.0 + lam[k - 1].abs());
    let separated = |i: usize| lam[i] - lam[i - 1] > tie;

    let p = (1..k).rev().find(|&i| separated(i)).unwrap_or(0);
    let q = (k..n).find(|&i| separated(i)).unwrap_or(n);

    let gap_p = if p == 0 {
        f64::INFINITY
    } else {
        lam[p] - lam[p - 1]
    };
    let gap_q = if q == n {
        f64::INFINITY
    } else {
        lam[q] - lam[q - 1]
    };
    let breve_delta = gap_p.min(gap_q);

    let frac = (k - p) as f64 / (q - p) as f64;
    let c = Array1::from_shape_fn(n, |i| {
        if i < p {
            1.0
        } else if i < q {
            frac
        } else {
            0.0
        }
    });

    let vq = eig.vectors.slice(s![.., ..q]);
    let weights = c.slice(s![..q]);
    let scaled = &vq * &weights.insert_axis(Axis(0));
    let mut u = scaled.dot(&vq.t());
    // symmetrize roundoff
    let ut = u.t().to_owned();
    u = (&u + &ut) * 0.5;

    SpectralSolution {
        u,
        c,
        p,
        q,
        breve_delta,
        k,
        eig,
    }
}

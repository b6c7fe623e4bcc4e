#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tfcl::data::GroundTruth;
use tfcl::{MultiTaskDataset, Task};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let a = gaussian(rng, n, n);
    (&a + &a.t()) * 0.5
}

/// Random matrix with orthonormal columns via Gram-Schmidt.
pub fn random_orthonormal(rng: &mut impl Rng, n: usize, k: usize) -> Array2<f64> {
    let mut q = gaussian(rng, n, k);
    for j in 0..k {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-proj, &qi);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Random +-1 labels with both classes present.
pub fn random_labels(rng: &mut impl Rng, n: usize) -> Array1<f64> {
    assert!(n >= 2);
    let mut y = Array1::from_shape_fn(n, |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
    y[0] = 1.0;
    y[1] = -1.0;
    y
}

pub fn random_binary_dataset(
    rng: &mut impl Rng,
    t: usize,
    d: usize,
    n_max: usize,
) -> MultiTaskDataset {
    let tasks = (0..t)
        .map(|_| {
            let n = rng.random_range(2..=n_max);
            Task::new(gaussian(rng, n, d), random_labels(rng, n)).unwrap()
        })
        .collect();
    MultiTaskDataset::new(tasks).unwrap()
}

/// Noiseless regression instance with `blocks` diagonal blocks of
/// `fpb x tpb` nonzero weights.
pub fn exact_block_instance(
    seed: u64,
    blocks: usize,
    fpb: usize,
    tpb: usize,
    n: usize,
) -> (MultiTaskDataset, GroundTruth) {
    let mut rng = rng(seed);
    let (d, t) = (blocks * fpb, blocks * tpb);
    let feature_block: Vec<usize> = (0..d).map(|i| i / fpb).collect();
    let task_block: Vec<usize> = (0..t).map(|j| j / tpb).collect();
    let w = Array2::from_shape_fn((d, t), |(i, j)| {
        if feature_block[i] == task_block[j] {
            let m: f64 = rng.random_range(1.0..3.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        } else {
            0.0
        }
    });
    let tasks = (0..t)
        .map(|j| {
            let x = gaussian(&mut rng, n, d);
            let y = x.dot(&w.column(j));
            Task::new(x, y).unwrap()
        })
        .collect();
    (
        MultiTaskDataset::new(tasks).unwrap(),
        GroundTruth {
            w_star: w,
            feature_block,
            task_block,
        },
    )
}

/// Weight matrix of the three-block example whose Laplacian has a triple
/// zero eigenvalue: blocks of size 5 x 6 with constant weights 1, 2, 3.
pub fn tied_blocks_weights() -> Array2<f64> {
    let mut w = Array2::zeros((15, 18));
    for (b, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
        for i in 0..5 {
            for j in 0..6 {
                w[[5 * b + i, 6 * b + j]] = v;
            }
        }
    }
    w
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Smallest eigenvalue of a symmetric matrix via the Jacobi oracle.
pub fn min_eig(a: &Array2<f64>) -> f64 {
    jacobi_eigenvalues(a)[0]
}

pub fn max_eig(a: &Array2<f64>) -> f64 {
    *jacobi_eigenvalues(a).last().unwrap()
}

/// Checks `0 <= U <= I` and `tr U = k` within `tol`.
pub fn in_gamma(u: &Array2<f64>, k: usize, tol: f64) -> bool {
    let n = u.nrows();
    let sym = (0..n).all(|i| (0..n).all(|j| (u[[i, j]] - u[[j, i]]).abs() <= tol));
    let trace: f64 = (0..n).map(|i| u[[i, i]]).sum();
    let eig = jacobi_eigenvalues(u);
    sym && (trace - k as f64).abs() <= tol * (1.0 + k as f64)
        && eig[0] >= -tol
        && *eig.last().unwrap() <= 1.0 + tol
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut r = b.clone();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        for k in 0..n {
            m.swap([col, k], [piv, k]);
        }
        r.swap(col, piv);
        for row in col + 1..n {
            let f = m[[row, col]] / m[[col, col]];
            for k in col..n {
                m[[row, k]] -= f * m[[col, k]];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[[row, k]] * x[k]).sum();
        x[row] = (r[row] - s) / m[[row, row]];
    }
    x
}

/// `(X^T X + ridge I)^{-1} X^T y` through the normal equations.
pub fn ridge_oracle(x: &Array2<f64>, y: &Array1<f64>, ridge: f64) -> Array1<f64> {
    let mut g = x.t().dot(x);
    for i in 0..g.nrows() {
        g[[i, i]] += ridge;
    }
    gauss_solve(&g, &x.t().dot(y))
}

/// Pairwise AUC surrogate `sum_{p+, q-} (1 - (s_p - s_q))^2 / (n+ n-)` of one task.
pub fn naive_auc_loss(x: &Array2<f64>, y: &Array1<f64>, w: ndarray::ArrayView1<f64>) -> f64 {
    let s = x.dot(&w);
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] <= 0.0).collect();
    let norm = (pos.len() * neg.len()) as f64;
    let mut acc = 0.0;
    for &p in &pos {
        for &q in &neg {
            let m = 1.0 - (s[p] - s[q]);
            acc += m * m;
        }
    }
    acc / norm
}

/// Gradient of [`naive_auc_loss`] by explicit pair summation.
pub fn naive_auc_grad(
    x: &Array2<f64>,
    y: &Array1<f64>,
    w: ndarray::ArrayView1<f64>,
) -> Array1<f64> {
    let s = x.dot(&w);
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] <= 0.0).collect();
    let norm = (pos.len() * neg.len()) as f64;
    let mut g = Array1::zeros(x.ncols());
    for &p in &pos {
        for &q in &neg {
            let m = 1.0 - (s[p] - s[q]);
            let diff = &x.row(p) - &x.row(q);
            g.scaled_add(-2.0 * m / norm, &diff);
        }
    }
    g
}

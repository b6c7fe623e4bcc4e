//! Empirical losses over multi-task data.
//!
//! Two losses are provided: the instance-wise squared loss
//! `sum_i 1/2 ||y_i - X_i w_i||^2` and the squared AUC surrogate
//! `sum_i sum_{p in S+} sum_{q in S-} (1 - (s_p - s_q))^2 / (n+ n-)`.
//! The AUC surrogate is evaluated in linear time through the Laplacian of
//! the complete bipartite positive/negative comparison graph, whose
//! quadratic form on the residual `r = s - y~` (with `y~ = (1 + y) / 2`)
//! equals the pairwise sum exactly.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Result, TfclError};
use crate::linalg;

/// One task: an `n x d` design and `n` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Task {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(TfclError::DimensionMismatch(format!(
                "task has {} rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 {
            return Err(TfclError::InvalidDataset("task has no samples".into()));
        }
        if !linalg::all_finite(x.view()) || !y.iter().all(|v| v.is_finite()) {
            return Err(TfclError::InvalidDataset(
                "task has non-finite values".into(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_pos(&self) -> usize {
        self.y.iter().filter(|v| **v > 0.0).count()
    }

    pub fn n_neg(&self) -> usize {
        self.n() - self.n_pos()
    }

    /// `(1 + y) / 2`, the 0/1 encoding of +-1 labels.
    pub fn y_tilde(&self) -> Array1<f64> {
        self.y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }
}

/// Per-task designs and labels sharing a feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    tasks: Vec<Task>,
    ids: Vec<String>,
    d: usize,
}

impl MultiTaskDataset {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let ids = (0..tasks.len()).map(|i| format!("u{i}")).collect();
        Self::with_ids(tasks, ids)
    }

    pub fn with_ids(tasks: Vec<Task>, ids: Vec<String>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(TfclError::InvalidDataset("dataset has no tasks".into()));
        }
        if ids.len() != tasks.len() {
            return Err(TfclError::DimensionMismatch(format!(
                "{} ids for {} tasks",
                ids.len(),
                tasks.len()
            )));
        }
        let d = tasks[0].x.ncols();
        if d == 0 {
            return Err(TfclError::InvalidDataset(
                "feature dimension is zero".into(),
            ));
        }
        if let Some((i, t)) = tasks.iter().enumerate().find(|(_, t)| t.x.ncols() != d) {
            return Err(TfclError::DimensionMismatch(format!(
                "task {i} has {} features, expected {d}",
                t.x.ncols()
            )));
        }
        Ok(Self { tasks, ids, d })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn t(&self) -> usize {
        self.tasks.len()
    }

    pub fn total_samples(&self) -> usize {
        self.tasks.iter().map(Task::n).sum()
    }

    /// Checks +-1 labels with both classes present in every task.
    pub fn check_binary(&self) -> Result<()> {
        for (i, task) in self.tasks.iter().enumerate() {
            if task.y.iter().any(|v| *v != 1.0 && *v != -1.0) {
                return Err(TfclError::InvalidDataset(format!(
                    "task {} has labels outside {{-1, 1}}",
                    self.ids[i]
                )));
            }
            if task.n_pos() == 0 || task.n_neg() == 0 {
                return Err(TfclError::InvalidDataset(format!(
                    "task {} is missing a class (n+ = {}, n- = {})",
                    self.ids[i],
                    task.n_pos(),
                    task.n_neg()
                )));
            }
        }
        Ok(())
    }
}

fn check_shape(w: ArrayView2<f64>, data: &MultiTaskDataset) -> Result<()> {
    if w.dim() != (data.d(), data.t()) {
        return Err(TfclError::DimensionMismatch(format!(
            "weights are {:?}, data needs ({}, {})",
            w.dim(),
            data.d(),
            data.t()
        )));
    }
    Ok(())
}

pub fn squared_loss_value(w: ArrayView2<f64>, data: &MultiTaskDataset) -> Result<f64> {
    check_shape(w, data)?;
    Ok(data
        .tasks()
        .iter()
        .zip(w.columns())
        .map(|(task, wi)| {
            let r = task.x.dot(&wi) - &task.y;
            0.5 * r.dot(&r)
        })
        .sum())
}

pub fn squared_loss_grad(w: ArrayView2<f64>, data: &MultiTaskDataset) -> Result<Array2<f64>> {
    check_shape(w, data)?;
    let mut g = Array2::zeros(w.raw_dim());
    for ((task, wi), mut gi) in data.tasks().iter().zip(w.columns()).zip(g.columns_mut()) {
        let r = task.x.dot(&wi) - &task.y;
        gi.assign(&task.x.t().dot(&r));
    }
    Ok(g)
}

/// Per-task comparison-graph quantities for the AUC surrogate.
#[derive(Debug, Clone)]
pub struct AucGraphCache {
    pub y_tilde: Vec<Array1<f64>>,
    /// Diagonal of the comparison Laplacian: `y~/n+ + (1 - y~)/n-`.
    pub degree: Vec<Array1<f64>>,
    pub n_pos: Vec<usize>,
    pub n_neg: Vec<usize>,
    /// `(1/n+) X^T y~` per task.
    pub x_pos_mean: Vec<Array1<f64>>,
    /// `(1/n-) X^T (1 - y~)` per task.
    pub x_neg_mean: Vec<Array1<f64>>,
}

impl AucGraphCache {
    pub fn new(data: &MultiTaskDataset) -> Result<Self> {
        data.check_binary()?;
        let t = data.t();
        let mut cache = Self {
            y_tilde: Vec::with_capacity(t),
            degree: Vec::with_capacity(t),
            n_pos: Vec::with_capacity(t),
            n_neg: Vec::with_capacity(t),
            x_pos_mean: Vec::with_capacity(t),
            x_neg_mean: Vec::with_capacity(t),
        };
        for task in data.tasks() {
            let yt = task.y_tilde();
            let (np, nn) = (task.n_pos(), task.n_neg());
            let (fp, fnn) = (1.0 / np as f64, 1.0 / nn as f64);
            let neg = yt.mapv(|v| 1.0 - v);
            cache.degree.push(yt.mapv(|v| v * fp + (1.0 - v) * fnn));
            cache.x_pos_mean.push(task.x.t().dot(&yt) * fp);
            cache.x_neg_mean.push(task.x.t().dot(&neg) * fnn);
            cache.y_tilde.push(yt);
            cache.n_pos.push(np);
            cache.n_neg.push(nn);
        }
        Ok(cache)
    }

    /// Dense comparison-graph Laplacian for task `i`; meant for checks on small tasks.
    pub fn dense_laplacian(&self, i: usize) -> Array2<f64> {
        let yt = &self.y_tilde[i];
        let n = yt.len();
        let w = 1.0 / (self.n_pos[i] * self.n_neg[i]) as f64;
        let mut l = Array2::zeros((n, n));
        for a in 0..n {
            for b in 0..n {
                if yt[a] != yt[b] {
                    l[[a, b]] = -w;
                }
            }
            l[[a, a]] = self.degree[i][a];
        }
        l
    }

    /// `||L_AUC||_2 = n / (n+ n-)` for task `i`.
    pub fn laplacian_norm(&self, i: usize) -> f64 {
        (self.n_pos[i] + self.n_neg[i]) as f64 / (self.n_pos[i] * self.n_neg[i]) as f64
    }

    fn projections(&self, i: usize, r: ArrayView1<f64>) -> (f64, f64) {
        let yt = &self.y_tilde[i];
        let (mut sp, mut sn) = (0.0, 0.0);
        for (ri, yi) in r.iter().zip(yt.iter()) {
            if *yi > 0.5 {
                sp += ri;
            } else {
                sn += ri;
            }
        }
        (sp / self.n_pos[i] as f64, sn / self.n_neg[i] as f64)
    }

    /// `r^T L r` in linear time.
    fn quadratic_form(&self, i: usize, r: ArrayView1<f64>) -> f64 {
        let (rp, rn) = self.projections(i, r);
        let diag: f64 = r
            .iter()
            .zip(self.degree[i].iter())
            .map(|(ri, di)| di * ri * ri)
            .sum();
        diag - 2.0 * rp * rn
    }

    /// `X^T L r` in linear time.
    fn apply_xt_l(&self, i: usize, x: ArrayView2<f64>, r: ArrayView1<f64>) -> Array1<f64> {
        let (rp, rn) = self.projections(i, r);
        let weighted = &self.degree[i] * &r;
        x.t().dot(&weighted) - &(&self.x_pos_mean[i] * rn) - &(&self.x_neg_mean[i] * rp)
    }
}

fn check_cache(data: &MultiTaskDataset, cache: &AucGraphCache) -> Result<()> {
    if cache.y_tilde.len() != data.t() {
        return Err(TfclError::DimensionMismatch(
            "AUC cache was built for a different dataset".into(),
        ));
    }
    Ok(())
}

/// Pairwise squared AUC surrogate for the per-task weight columns of `w`.
pub fn auc_loss_value(
    w: ArrayView2<f64>,
    data: &MultiTaskDataset,
    cache: &AucGraphCache,
) -> Result<f64> {
    check_shape(w, data)?;
    check_cache(data, cache)?;
    Ok(data
        .tasks()
        .iter()
        .zip(w.columns())
        .enumerate()
        .map(|(i, (task, wi))| {
            let r = task.x.dot(&wi) - &cache.y_tilde[i];
            cache.quadratic_form(i, r.view())
        })
        .sum())
}

/// Gradient of the AUC surrogate with respect to each task column (`d x T`).
pub fn auc_loss_grad_columns(
    w: ArrayView2<f64>,
    data: &MultiTaskDataset,
    cache: &AucGraphCache,
) -> Result<Array2<f64>> {
    check_shape(w, data)?;
    check_cache(data, cache)?;
    let mut g = Array2::zeros(w.raw_dim());
    for (i, ((task, wi), mut gi)) in data
        .tasks()
        .iter()
        .zip(w.columns())
        .zip(g.columns_mut())
        .enumerate()
    {
        let r = task.x.dot(&wi) - &cache.y_tilde[i];
        gi.assign(&(cache.apply_xt_l(i, task.x.view(), r.view()) * 2.0));
    }
    Ok(g)
}

/// Gradients of the AUC surrogate with respect to the consensus vector and
/// the grouping / personal matrices of a personalized model.
#[derive(Debug, Clone)]
pub struct AucGradients {
    pub theta_c: Array1<f64>,
    pub theta_g: Array2<f64>,
    pub theta_p: Array2<f64>,
}

/// `w_eff` holds the effective per-user weights `theta_c + theta_g_i + theta_p_i`.
pub fn auc_loss_grad(
    w_eff: ArrayView2<f64>,
    data: &MultiTaskDataset,
    cache: &AucGraphCache,
) -> Result<AucGradients> {
    let cols = auc_loss_grad_columns(w_eff, data, cache)?;
    Ok(AucGradients {
        theta_c: cols.sum_axis(Axis(1)),
        theta_g: cols.clone(),
        theta_p: cols,
    })
}

/// `max_i ||X_i^T X_i||_2`, a Lipschitz constant for the squared-loss gradient in `W`.
pub fn lipschitz_squared(data: &MultiTaskDataset) -> f64 {
    data.tasks()
        .iter()
        .map(|t| {
            let x = t.x.view();
            linalg::power_iteration(x.ncols(), |v| x.t().dot(&x.dot(&v)), 1e-6, 500)
        })
        .fold(0.0, f64::max)
}

/// `max_i 2 n_i ||X_i||_2^2 / (n+ n-)`, a Lipschitz constant for the AUC
/// surrogate gradient in `W` (columns decouple).
pub fn lipschitz_auc(data: &MultiTaskDataset) -> Result<f64> {
    data.check_binary()?;
    Ok(data
        .tasks()
        .iter()
        .map(|t| 2.0 * auc_scale(t) * linalg::spectral_norm_sq(t.x.view()))
        .fold(0.0, f64::max))
}

fn auc_scale(t: &Task) -> f64 {
    t.n() as f64 / (t.n_pos() * t.n_neg()) as f64
}

/// `3 T sqrt(2T + 1) max_i n_i ||X_i||_2^2 / (n+ n-)`, the Lipschitz
/// constant of the personalized AUC objective in `(theta_c, theta_g, theta_p)`.
pub fn lipschitz_personalized(data: &MultiTaskDataset) -> Result<f64> {
    data.check_binary()?;
    let t = data.t() as f64;
    let worst = data
        .tasks()
        .iter()
        .map(|task| auc_scale(task) * linalg::spectral_norm_sq(task.x.view()))
        .fold(0.0, f64::max);
    Ok(3.0 * t * (2.0 * t + 1.0).sqrt() * worst)
}

/// Lipschitz constant of the personalized objective from the structure of
/// the parameter map: the map `(c, g, p) -> c + g_i + p_i` has squared norm
/// `T + 2`, so `(T + 2) * max_i ||grad^2 l_i||` bounds the Hessian.
pub fn lipschitz_personalized_tight(data: &MultiTaskDataset, per_task: f64) -> f64 {
    (data.t() as f64 + 2.0) * per_task
}

/// Mann-Whitney AUC of one user's scores, ties counted as 1/2.
///
/// Returns `None` when either class is absent.
pub fn user_auc(scores: ArrayView1<f64>, labels: ArrayView1<f64>) -> Option<f64> {
    let n = scores.len();
    let n_pos = labels.iter().filter(|v| **v > 0.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] > 0.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average of per-user AUCs over users that have both classes.
///
/// Returns `NaN` when no user qualifies.
pub fn auc_metric(scores: &[Array1<f64>], labels: &[Array1<f64>]) -> f64 {
    let aucs: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter_map(|(s, y)| user_auc(s.view(), y.view()))
        .collect();
    if aucs.is_empty() {
        return f64::NAN;
    }
    aucs.iter().sum::<f64>() / aucs.len() as f64
}

/// A differentiable multi-task loss over a `d x T` weight matrix.
pub trait MultiTaskLoss: Sync {
    fn value(&self, w: ArrayView2<f64>) -> Result<f64>;
    fn grad(&self, w: ArrayView2<f64>) -> Result<Array2<f64>>;
    /// Lipschitz constant of `grad` in Frobenius norm.
    fn lipschitz(&self) -> f64;
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy)]
pub struct SquaredLoss<'a> {
    data: &'a MultiTaskDataset,
}

impl<'a> SquaredLoss<'a> {
    pub fn new(data: &'a MultiTaskDataset) -> Self {
        Self { data }
    }
}

impl MultiTaskLoss for SquaredLoss<'_> {
    fn value(&self, w: ArrayView2<f64>) -> Result<f64> {
        squared_loss_value(w, self.data)
    }

    fn grad(&self, w: ArrayView2<f64>) -> Result<Array2<f64>> {
        squared_loss_grad(w, self.data)
    }

    fn lipschitz(&self) -> f64 {
        lipschitz_squared(self.data)
    }

    fn name(&self) -> &'static str {
        "squared"
    }
}

#[derive(Debug, Clone)]
pub struct AucLoss<'a> {
    data: &'a MultiTaskDataset,
    cache: AucGraphCache,
    lipschitz: f64,
}

impl<'a> AucLoss<'a> {
    pub fn new(data: &'a MultiTaskDataset) -> Result<Self> {
        let cache = AucGraphCache::new(data)?;
        let lipschitz = lipschitz_auc(data)?;
        Ok(Self {
            data,
            cache,
            lipschitz,
        })
    }

    pub fn cache(&self) -> &AucGraphCache {
        &self.cache
    }
}

impl MultiTaskLoss for AucLoss<'_> {
    fn value(&self, w: ArrayView2<f64>) -> Result<f64> {
        auc_loss_value(w, self.data, &self.cache)
    }

    fn grad(&self, w: ArrayView2<f64>) -> Result<Array2<f64>> {
        auc_loss_grad_columns(w, self.data, &self.cache)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn name(&self) -> &'static str {
        "auc"
    }
}

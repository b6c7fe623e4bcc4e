//! Personalized attribute prediction.
//!
//! Each user's weight vector decomposes as `theta_c + theta_g_i + theta_p_i`:
//! a consensus vector shared by every user (ridge penalty), a grouping
//! matrix regularized by the bipartite bottom-k eigenvalue term plus a ridge
//! penalty, and a column-sparse personal matrix (l1,2 penalty) that absorbs
//! outlier users. All three blocks take one joint gradient step per
//! iteration followed by their own closed-form prox; the grouping block
//! shares the U-update / W-prox machinery of the base solver.
//!
//! Hyperparameter names: `lam_c` weights `||theta_c||^2 / 2`, `lam_graph`
//! weights `<L(theta_g), U>`, `lam_g` weights `||theta_g||_F^2 / 2` and
//! `lam_p` weights `||theta_p||_{1,2}`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TfclError};
use crate::linalg;
use crate::losses::{
    self, auc_loss_grad_columns, auc_loss_value, squared_loss_grad, squared_loss_value,
    AucGraphCache, MultiTaskDataset,
};
use crate::prox::{column_group_prox, l2_prox, soft_threshold, w_prox, ProxWeights};
use crate::solver::{
    final_spectrum, graph_step, graph_term, resolve_step, uniform_u, FitHistory, IterRecord,
    StopReason, StopRule, DEFAULT_C_SAFETY, WARM_START_RIDGE,
};
use crate::spectral::{SpectralSolution, DEFAULT_GAP_TOL};

/// Consensus, grouping and personal components.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedParams {
    pub theta_c: Array1<f64>,
    pub theta_g: Array2<f64>,
    pub theta_p: Array2<f64>,
}

impl PersonalizedParams {
    pub fn zeros(d: usize, t: usize) -> Self {
        Self {
            theta_c: Array1::zeros(d),
            theta_g: Array2::zeros((d, t)),
            theta_p: Array2::zeros((d, t)),
        }
    }

    pub fn new(theta_c: Array1<f64>, theta_g: Array2<f64>, theta_p: Array2<f64>) -> Result<Self> {
        if theta_g.dim() != theta_p.dim() || theta_g.nrows() != theta_c.len() {
            return Err(TfclError::DimensionMismatch(format!(
                "theta_c {}, theta_g {:?}, theta_p {:?}",
                theta_c.len(),
                theta_g.dim(),
                theta_p.dim()
            )));
        }
        let finite = theta_c.iter().all(|v| v.is_finite())
            && linalg::all_finite(theta_g.view())
            && linalg::all_finite(theta_p.view());
        if !finite {
            return Err(TfclError::InvalidInput("parameters must be finite".into()));
        }
        Ok(Self {
            theta_c,
            theta_g,
            theta_p,
        })
    }

    pub fn d(&self) -> usize {
        self.theta_c.len()
    }

    pub fn t(&self) -> usize {
        self.theta_g.ncols()
    }

    /// Effective per-user weights, one column per user.
    pub fn effective(&self) -> Array2<f64> {
        &self.theta_g + &self.theta_p + self.theta_c.view().insert_axis(Axis(1))
    }

    fn distance(&self, other: &Self) -> f64 {
        let dc = &self.theta_c - &other.theta_c;
        let dg = &self.theta_g - &other.theta_g;
        let dp = &self.theta_p - &other.theta_p;
        (dc.dot(&dc)
            + dg.iter().map(|v| v * v).sum::<f64>()
            + dp.iter().map(|v| v * v).sum::<f64>())
        .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Auc,
    Squared,
}

/// How the Lipschitz constant of the joint gradient is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `3T sqrt(2T+1) max_i n_i ||X_i||^2 / (n+ n-)` (AUC), with the
    /// squared loss using `||X_i||^2` in place of the per-task factor.
    #[default]
    Closed,
    /// `(T + 2) max_i ||per-task Hessian||`, the norm of the parameter map
    /// times the largest per-task curvature.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QConfig {
    pub k: usize,
    pub lam_c: f64,
    pub lam_graph: f64,
    pub lam_g: f64,
    pub lam_p: f64,
    pub loss: LossKind,
    pub step_rule: StepRule,
    /// Step constant; `None` selects `c_safety * lipschitz`.
    pub c: Option<f64>,
    pub c_safety: f64,
    pub max_iters: usize,
    pub tol_param: f64,
    pub tol_obj: f64,
    pub gap_tol: f64,
    pub seed: u64,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            k: 2,
            lam_c: 1e-2,
            lam_graph: 1.0,
            lam_g: 1e-2,
            lam_p: 1.0,
            loss: LossKind::Auc,
            step_rule: StepRule::Closed,
            c: None,
            c_safety: DEFAULT_C_SAFETY,
            max_iters: 500,
            tol_param: 1e-6,
            tol_obj: 1e-9,
            gap_tol: DEFAULT_GAP_TOL,
            seed: 0,
        }
    }
}

impl QConfig {
    pub fn validate(&self, d: usize, t: usize) -> Result<()> {
        let bad = |msg: String| Err(TfclError::InvalidConfig(msg));
        if self.k == 0 || self.k >= d + t {
            return bad(format!("k must lie in 1..{}, got {}", d + t, self.k));
        }
        for (name, v) in [
            ("lam_c", self.lam_c),
            ("lam_graph", self.lam_graph),
            ("lam_g", self.lam_g),
            ("lam_p", self.lam_p),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.c_safety > 1.0) {
            return bad(format!("c_safety must be > 1, got {}", self.c_safety));
        }
        if !(self.tol_param > 0.0) || !(self.tol_obj > 0.0) || !(self.gap_tol > 0.0) {
            return bad("tolerances must be > 0".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        Ok(())
    }
}

/// Loss evaluator for the effective weight matrix.
enum BoundLoss<'a> {
    Auc(&'a MultiTaskDataset, AucGraphCache),
    Squared(&'a MultiTaskDataset),
}

impl<'a> BoundLoss<'a> {
    fn new(data: &'a MultiTaskDataset, kind: LossKind) -> Result<Self> {
        Ok(match kind {
            LossKind::Auc => BoundLoss::Auc(data, AucGraphCache::new(data)?),
            LossKind::Squared => BoundLoss::Squared(data),
        })
    }

    fn value(&self, w: ArrayView2<f64>) -> Result<f64> {
        match self {
            BoundLoss::Auc(data, cache) => auc_loss_value(w, data, cache),
            BoundLoss::Squared(data) => squared_loss_value(w, data),
        }
    }

    fn grad(&self, w: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            BoundLoss::Auc(data, cache) => auc_loss_grad_columns(w, data, cache),
            BoundLoss::Squared(data) => squared_loss_grad(w, data),
        }
    }
}

/// Lipschitz constant of the joint gradient in `(theta_c, theta_g, theta_p)`.
pub fn personalized_lipschitz(
    data: &MultiTaskDataset,
    loss: LossKind,
    rule: StepRule,
) -> Result<f64> {
    let t = data.t() as f64;
    match (loss, rule) {
        (LossKind::Auc, StepRule::Closed) => losses::lipschitz_personalized(data),
        (LossKind::Auc, StepRule::Structural) => Ok(losses::lipschitz_personalized_tight(
            data,
            losses::lipschitz_auc(data)?,
        )),
        (LossKind::Squared, StepRule::Closed) => {
            Ok(3.0 * t * (2.0 * t + 1.0).sqrt() * losses::lipschitz_squared(data))
        }
        (LossKind::Squared, StepRule::Structural) => Ok(losses::lipschitz_personalized_tight(
            data,
            losses::lipschitz_squared(data),
        )),
    }
}

/// `||M||_{1,2} = sum_j ||M_j||_2` over columns.
pub fn l12_norm(m: ArrayView2<f64>) -> f64 {
    m.columns().into_iter().map(|c| c.dot(&c).sqrt()).sum()
}

fn objective_with(
    params: &PersonalizedParams,
    u: ArrayView2<f64>,
    loss: &BoundLoss<'_>,
    cfg: &QConfig,
) -> Result<f64> {
    let j = loss.value(params.effective().view())?;
    let graph = if cfg.lam_graph == 0.0 {
        0.0
    } else {
        graph_term(params.theta_g.view(), u)?
    };
    Ok(j + 0.5 * cfg.lam_c * params.theta_c.dot(&params.theta_c)
        + cfg.lam_graph * graph
        + 0.5 * cfg.lam_g * params.theta_g.iter().map(|v| v * v).sum::<f64>()
        + cfg.lam_p * l12_norm(params.theta_p.view()))
}

pub fn objective_q(
    params: &PersonalizedParams,
    u: ArrayView2<f64>,
    data: &MultiTaskDataset,
    cfg: &QConfig,
) -> Result<f64> {
    let loss = BoundLoss::new(data, cfg.loss)?;
    objective_with(params, u, &loss, cfg)
}

/// Consensus warm start: ridge on all tasks pooled, penalty `max(lam_c, 1e-3)`.
fn consensus_start(data: &MultiTaskDataset, cfg: &QConfig) -> Result<Array1<f64>> {
    let d = data.d();
    let mut gram = Array2::<f64>::zeros((d, d));
    let mut rhs = Array1::<f64>::zeros(d);
    for task in data.tasks() {
        let target = match cfg.loss {
            LossKind::Auc => task.y_tilde(),
            LossKind::Squared => task.y.clone(),
        };
        gram += &task.x.t().dot(&task.x);
        rhs += &task.x.t().dot(&target);
    }
    let ridge = cfg.lam_c.max(WARM_START_RIDGE);
    for i in 0..d {
        gram[[i, i]] += ridge;
    }
    linalg::solve_spd(gram.view(), rhs.view())
}

#[derive(Debug, Clone)]
pub struct PersonalizedFit {
    pub params: PersonalizedParams,
    pub u: Array2<f64>,
    /// Spectrum of the Laplacian built from the returned `theta_g`.
    pub final_spectrum: Option<SpectralSolution>,
    pub history: FitHistory,
}

pub fn fit_personalized(data: &MultiTaskDataset, cfg: &QConfig) -> Result<PersonalizedFit> {
    let init = PersonalizedParams {
        theta_c: consensus_start(data, cfg)?,
        ..PersonalizedParams::zeros(data.d(), data.t())
    };
    fit_personalized_from(data, cfg, init)
}

pub fn fit_personalized_from(
    data: &MultiTaskDataset,
    cfg: &QConfig,
    init: PersonalizedParams,
) -> Result<PersonalizedFit> {
    let (d, t) = (data.d(), data.t());
    cfg.validate(d, t)?;
    if (init.d(), init.t()) != (d, t) {
        return Err(TfclError::DimensionMismatch(format!(
            "initial parameters are {}x{}, expected {d}x{t}",
            init.d(),
            init.t()
        )));
    }
    let loss = BoundLoss::new(data, cfg.loss)?;
    let rho = personalized_lipschitz(data, cfg.loss, cfg.step_rule)?;
    let c = resolve_step(cfg.c, cfg.c_safety, rho)?;
    let graph_weights = ProxWeights::new(cfg.lam_graph, cfg.lam_g, c)?;

    let mut params = init;
    let n = d + t;
    let mut u = graph_step(
        params.theta_g.view(),
        uniform_u(n, cfg.k).view(),
        cfg.k,
        cfg.gap_tol,
    )?
    .u;

    let mut history = FitHistory {
        initial_objective: objective_with(&params, u.view(), &loss, cfg)?,
        lipschitz: rho,
        step_constant: c,
        ..FitHistory::default()
    };
    let bound_scale = c + rho + cfg.lam_graph * ((d as f64).sqrt() + (t as f64).sqrt() + 2.0);
    let mut stop = StopRule::new(cfg.tol_param, cfg.tol_obj);
    let start = Instant::now();
    let mut prev_obj = history.initial_objective;

    for iter in 1..=cfg.max_iters {
        let grad = loss.grad(params.effective().view())?;
        let grad_c = grad.sum_axis(Axis(1));

        let theta_c = l2_prox((&params.theta_c - &(&grad_c / c)).view(), cfg.lam_c / c);
        let theta_p = column_group_prox((&params.theta_p - &(&grad / c)).view(), cfg.lam_p / c);
        let g_tilde = &params.theta_g - &(&grad / c);
        let (theta_g, next_u, solution) = if cfg.lam_graph == 0.0 {
            (
                w_prox(g_tilde.view(), Array2::zeros((d, t)).view(), &graph_weights)?,
                u.clone(),
                None,
            )
        } else {
            let step = graph_step(params.theta_g.view(), u.view(), cfg.k, cfg.gap_tol)?;
            let theta_g = w_prox(g_tilde.view(), step.dist.view(), &graph_weights)?;
            (theta_g, step.u, step.solution)
        };
        let next = PersonalizedParams {
            theta_c,
            theta_g,
            theta_p,
        };

        let delta_w = next.distance(&params);
        let delta_u = linalg::frobenius((&next_u - &u).view());
        let obj = objective_with(&next, next_u.view(), &loss, cfg)?;
        if !obj.is_finite() {
            return Err(TfclError::Diverged {
                iteration: iter,
                value: obj,
            });
        }
        history.push(IterRecord {
            objective: obj,
            delta_w,
            delta_u,
            subgrad_bound: bound_scale * delta_w.hypot(delta_u),
            breve_delta: solution.as_ref().map_or(f64::NAN, |s| s.breve_delta),
            grad_inf_norm: linalg::max_abs(grad.view()),
            frozen_u: solution.is_none(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        params = next;
        u = next_u;

        if let Some(reason) = stop.check(delta_w + delta_u, prev_obj, obj) {
            history.stop_reason = Some(reason);
            break;
        }
        prev_obj = obj;
    }
    if history.stop_reason.is_none() {
        history.stop_reason = Some(StopReason::MaxIters);
    }
    let final_spectrum = final_spectrum(params.theta_g.view(), cfg.k, cfg.gap_tol)?;
    Ok(PersonalizedFit {
        params,
        u,
        final_spectrum,
        history,
    })
}

/// Scores `X (theta_c + theta_g_user + theta_p_user)`.
pub fn predict(
    params: &PersonalizedParams,
    x: ArrayView2<f64>,
    user: usize,
) -> Result<Array1<f64>> {
    if user >= params.t() {
        return Err(TfclError::InvalidInput(format!(
            "user {user} out of range for {} users",
            params.t()
        )));
    }
    if x.ncols() != params.d() {
        return Err(TfclError::DimensionMismatch(format!(
            "X has {} columns, model has {} features",
            x.ncols(),
            params.d()
        )));
    }
    let w = &params.theta_c + &params.theta_g.column(user) + params.theta_p.column(user);
    Ok(x.dot(&w))
}

/// Per-user scores of a `d x T` weight matrix on every task of `data`.
pub fn scores_from_weights(
    w: ArrayView2<f64>,
    data: &MultiTaskDataset,
) -> Result<Vec<Array1<f64>>> {
    if w.dim() != (data.d(), data.t()) {
        return Err(TfclError::DimensionMismatch(format!(
            "weights are {:?}, data needs ({}, {})",
            w.dim(),
            data.d(),
            data.t()
        )));
    }
    Ok(data
        .tasks()
        .iter()
        .zip(w.columns())
        .map(|(task, wi)| task.x.dot(&wi))
        .collect())
}

/// Mean user AUC of a `d x T` weight matrix on `data`.
pub fn mean_auc(w: ArrayView2<f64>, data: &MultiTaskDataset) -> Result<f64> {
    let scores = scores_from_weights(w, data)?;
    let labels: Vec<Array1<f64>> = data.tasks().iter().map(|t| t.y.clone()).collect();
    Ok(losses::auc_metric(&scores, &labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LassoConfig {
    pub max_iters: usize,
    pub tol_param: f64,
    pub tol_obj: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol_param: 1e-8,
            tol_obj: 1e-12,
        }
    }
}

/// Independent per-task l1-regularized least squares by ISTA.
pub fn lasso_baseline(data: &MultiTaskDataset, lam: f64, cfg: &LassoConfig) -> Result<Array2<f64>> {
    if !(lam >= 0.0) {
        return Err(TfclError::InvalidConfig(format!(
            "lam must be >= 0, got {lam}"
        )));
    }
    let mut w = Array2::zeros((data.d(), data.t()));
    for (task, mut col) in data.tasks().iter().zip(w.columns_mut()) {
        let sol = lasso_task(task.x.view(), task.y.view(), lam, cfg);
        col.assign(&sol);
    }
    Ok(w)
}

fn lasso_task(x: ArrayView2<f64>, y: ArrayView1<f64>, lam: f64, cfg: &LassoConfig) -> Array1<f64> {
    let d = x.ncols();
    let lip = DEFAULT_C_SAFETY * linalg::spectral_norm_sq(x);
    let mut w = Array1::<f64>::zeros(d);
    if lip == 0.0 {
        return w;
    }
    let objective = |w: &Array1<f64>| {
        let r = x.dot(w) - y;
        0.5 * r.dot(&r) + lam * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut stop = StopRule::new(cfg.tol_param, cfg.tol_obj);
    let mut prev = objective(&w);
    for _ in 0..cfg.max_iters {
        let r = x.dot(&w) - y;
        let g = x.t().dot(&r);
        let next = (&w - &(&g / lip)).mapv(|v| soft_threshold(v, lam / lip));
        let change = {
            let diff = &next - &w;
            diff.dot(&diff).sqrt()
        };
        w = next;
        let obj = objective(&w);
        if stop.check(change, prev, obj).is_some() {
            break;
        }
        prev = obj;
    }
    w
}

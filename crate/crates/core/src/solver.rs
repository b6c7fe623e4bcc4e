//! Alternating U / W proximal-gradient solver for
//! `min_{W, U in Gamma} J(W) + a1 <L(W), U> + a2/2 ||W||_F^2`.
//!
//! Each outer iteration rebuilds the bipartite Laplacian from the previous
//! `W`, takes the closed-form U-update, then performs one proximal gradient
//! step on `W` with the embedding distances derived from `U` as per-entry
//! soft thresholds.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::bipartite::{distance_matrix, BipartiteLaplacian, TaskMatrix};
use crate::error::{Result, TfclError};
use crate::linalg;
use crate::losses::{MultiTaskDataset, MultiTaskLoss};
use crate::prox::{w_prox, ProxWeights};
use crate::spectral::{self, SpectralSolution, DEFAULT_GAP_TOL};

/// Default multiplier applied to the Lipschitz constant to get `C`.
pub const DEFAULT_C_SAFETY: f64 = 1.01;

/// Ridge used by the per-task warm start.
pub const WARM_START_RIDGE: f64 = 1e-3;

/// Consecutive small relative objective changes required to stop.
pub const OBJ_PATIENCE: usize = 5;

/// Allowed objective increase per step before it counts as a descent violation.
pub const DESCENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TfclConfig {
    /// Target number of task-feature groups.
    pub k: usize,
    /// Weight of the bottom-k eigenvalue regularizer.
    pub alpha1: f64,
    /// Weight of the squared Frobenius penalty.
    pub alpha2: f64,
    /// Step constant; `None` selects `c_safety * lipschitz`.
    pub c: Option<f64>,
    pub c_safety: f64,
    pub max_iters: usize,
    pub tol_param: f64,
    pub tol_obj: f64,
    pub gap_tol: f64,
    pub seed: u64,
}

impl Default for TfclConfig {
    fn default() -> Self {
        Self {
            k: 2,
            alpha1: 1.0,
            alpha2: 1e-2,
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

impl TfclConfig {
    pub fn validate(&self, d: usize, t: usize) -> Result<()> {
        let bad = |msg: String| Err(TfclError::InvalidConfig(msg));
        if self.k == 0 || self.k >= d + t {
            return bad(format!("k must lie in 1..{}, got {}", d + t, self.k));
        }
        if !(self.alpha1 >= 0.0) || !(self.alpha2 >= 0.0) {
            return bad("alpha1 and alpha2 must be >= 0".into());
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

    /// Resolves the step constant against the loss Lipschitz constant.
    pub fn step_constant(&self, lipschitz: f64) -> Result<f64> {
        resolve_step(self.c, self.c_safety, lipschitz)
    }
}

pub(crate) fn resolve_step(c: Option<f64>, safety: f64, lipschitz: f64) -> Result<f64> {
    let c = c.unwrap_or(safety * lipschitz);
    if !(c > lipschitz) || !c.is_finite() {
        return Err(TfclError::InvalidConfig(format!(
            "step constant C = {c} must exceed the Lipschitz constant {lipschitz}"
        )));
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ParamTolerance,
    ObjectiveTolerance,
    MaxIters,
}

/// Per-iteration record of a fit. Every vector has one entry per iteration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitHistory {
    pub initial_objective: f64,
    pub objective: Vec<f64>,
    pub delta_w: Vec<f64>,
    pub delta_u: Vec<f64>,
    /// `(C + rho + a1 (sqrt d + sqrt T + 2)) ||Delta Theta||`.
    pub subgrad_bound: Vec<f64>,
    pub breve_delta: Vec<f64>,
    /// Max absolute loss-gradient entry at the iterate the step started from.
    pub grad_inf_norm: Vec<f64>,
    /// True where the Laplacian was zero and `U` was carried over.
    pub frozen_u: Vec<bool>,
    pub elapsed_secs: Vec<f64>,
    pub lipschitz: f64,
    pub step_constant: f64,
    pub stop_reason: Option<StopReason>,
}

impl FitHistory {
    pub fn iterations(&self) -> usize {
        self.objective.len()
    }

    pub fn converged(&self) -> bool {
        matches!(
            self.stop_reason,
            Some(StopReason::ParamTolerance | StopReason::ObjectiveTolerance)
        )
    }

    pub fn final_objective(&self) -> f64 {
        self.objective
            .last()
            .copied()
            .unwrap_or(self.initial_objective)
    }

    /// Steps where the objective rose by more than `DESCENT_TOL (1 + |f|)`.
    pub fn descent_violations(&self) -> usize {
        let mut prev = self.initial_objective;
        let mut count = 0;
        for &f in &self.objective {
            if f > prev + DESCENT_TOL * (1.0 + prev.abs()) {
                count += 1;
            }
            prev = f;
        }
        count
    }

    pub(crate) fn push(&mut self, rec: IterRecord) {
        self.objective.push(rec.objective);
        self.delta_w.push(rec.delta_w);
        self.delta_u.push(rec.delta_u);
        self.subgrad_bound.push(rec.subgrad_bound);
        self.breve_delta.push(rec.breve_delta);
        self.grad_inf_norm.push(rec.grad_inf_norm);
        self.frozen_u.push(rec.frozen_u);
        self.elapsed_secs.push(rec.elapsed_secs);
    }
}

pub(crate) struct IterRecord {
    pub objective: f64,
    pub delta_w: f64,
    pub delta_u: f64,
    pub subgrad_bound: f64,
    pub breve_delta: f64,
    pub grad_inf_norm: f64,
    pub frozen_u: bool,
    pub elapsed_secs: f64,
}

/// Tracks the two stopping rules.
pub(crate) struct StopRule {
    tol_param: f64,
    tol_obj: f64,
    streak: usize,
}

impl StopRule {
    pub fn new(tol_param: f64, tol_obj: f64) -> Self {
        Self {
            tol_param,
            tol_obj,
            streak: 0,
        }
    }

    pub fn check(&mut self, param_change: f64, prev_obj: f64, obj: f64) -> Option<StopReason> {
        if param_change <= self.tol_param {
            return Some(StopReason::ParamTolerance);
        }
        let rel = (obj - prev_obj).abs() / (1.0 + prev_obj.abs());
        if rel < self.tol_obj {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        (self.streak >= OBJ_PATIENCE).then_some(StopReason::ObjectiveTolerance)
    }
}

/// Output of the U half-step.
pub(crate) struct GraphStep {
    pub u: Array2<f64>,
    pub dist: Array2<f64>,
    pub solution: Option<SpectralSolution>,
}

/// Rebuilds the Laplacian from `w` and solves for `U`; a zero Laplacian
/// keeps `prev_u`.
pub(crate) fn graph_step(
    w: ArrayView2<f64>,
    prev_u: ArrayView2<f64>,
    k: usize,
    gap_tol: f64,
) -> Result<GraphStep> {
    let (d, t) = w.dim();
    let lap = BipartiteLaplacian::from_weights(w)?;
    let (u, solution) = if lap.is_zero() {
        (prev_u.to_owned(), None)
    } else {
        let sol = spectral::u_update(&lap, k, gap_tol)?;
        (sol.u.clone(), Some(sol))
    };
    let dist = distance_matrix(u.view(), d, t)?;
    Ok(GraphStep { u, dist, solution })
}

/// `U = (k/N) I`, the feasible point used when no graph information exists.
pub fn uniform_u(n: usize, k: usize) -> Array2<f64> {
    Array2::eye(n) * (k as f64 / n as f64)
}

/// `<L(W), U>` through the distance form `sum_ij D_ij |W_ij|`.
pub fn graph_term(w: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<f64> {
    let (d, t) = w.dim();
    let dist = distance_matrix(u, d, t)?;
    let mut acc = 0.0;
    Zip::from(&dist)
        .and(&w)
        .for_each(|dv, wv| acc += dv * wv.abs());
    debug_assert!({
        let lap = BipartiteLaplacian::from_weights(w)?;
        let trace: f64 = (&lap.matrix() * &u).sum();
        (trace - acc).abs()
            <= 1e-8 * (1.0 + trace.abs()) + 1e-10 * linalg::max_abs(w) * (d * t) as f64
    });
    Ok(acc)
}

/// Objective of the base problem at `(W, U)`.
pub fn objective_p(
    w: ArrayView2<f64>,
    u: ArrayView2<f64>,
    loss: &dyn MultiTaskLoss,
    cfg: &TfclConfig,
) -> Result<f64> {
    let j = loss.value(w)?;
    let graph = if cfg.alpha1 == 0.0 {
        0.0
    } else {
        graph_term(w, u)?
    };
    let ridge = 0.5 * cfg.alpha2 * w.iter().map(|v| v * v).sum::<f64>();
    Ok(j + cfg.alpha1 * graph + ridge)
}

/// Per-task ridge warm start `(X^T X + 1e-3 I)^{-1} X^T y`.
pub fn default_w0(data: &MultiTaskDataset) -> Result<TaskMatrix> {
    let mut w = Array2::zeros((data.d(), data.t()));
    for (task, mut col) in data.tasks().iter().zip(w.columns_mut()) {
        let sol = linalg::ridge_solve(task.x.view(), task.y.view(), WARM_START_RIDGE)?;
        col.assign(&sol);
    }
    TaskMatrix::new(w)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub w: TaskMatrix,
    pub u: Array2<f64>,
    /// Spectrum of the Laplacian built from the returned `W`.
    pub final_spectrum: Option<SpectralSolution>,
    pub history: FitHistory,
}

pub fn fit(
    data: &MultiTaskDataset,
    loss: &dyn MultiTaskLoss,
    cfg: &TfclConfig,
    w0: Option<TaskMatrix>,
) -> Result<FitResult> {
    let (d, t) = (data.d(), data.t());
    cfg.validate(d, t)?;
    let rho = loss.lipschitz();
    let c = cfg.step_constant(rho)?;
    let weights = ProxWeights::new(cfg.alpha1, cfg.alpha2, c)?;

    let mut w = match w0 {
        Some(w0) => {
            if (w0.d(), w0.t()) != (d, t) {
                return Err(TfclError::DimensionMismatch(format!(
                    "W0 is {}x{}, expected {d}x{t}",
                    w0.d(),
                    w0.t()
                )));
            }
            w0.into_inner()
        }
        None => default_w0(data)?.into_inner(),
    };
    let n = d + t;
    let mut u = graph_step(w.view(), uniform_u(n, cfg.k).view(), cfg.k, cfg.gap_tol)?.u;

    let mut history = FitHistory {
        initial_objective: objective_p(w.view(), u.view(), loss, cfg)?,
        lipschitz: rho,
        step_constant: c,
        ..FitHistory::default()
    };
    let bound_scale = c + rho + cfg.alpha1 * ((d as f64).sqrt() + (t as f64).sqrt() + 2.0);
    let mut stop = StopRule::new(cfg.tol_param, cfg.tol_obj);
    let start = Instant::now();
    let mut prev_obj = history.initial_objective;

    for iter in 1..=cfg.max_iters {
        let step = graph_step(w.view(), u.view(), cfg.k, cfg.gap_tol)?;
        let grad = loss.grad(w.view())?;
        let w_tilde = &w - &(&grad / c);
        let w_next = w_prox(w_tilde.view(), step.dist.view(), &weights)?;

        let delta_w = linalg::frobenius((&w_next - &w).view());
        let delta_u = linalg::frobenius((&step.u - &u).view());
        let obj = objective_p(w_next.view(), step.u.view(), loss, cfg)?;
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
            breve_delta: step.solution.as_ref().map_or(f64::NAN, |s| s.breve_delta),
            grad_inf_norm: linalg::max_abs(grad.view()),
            frozen_u: step.solution.is_none(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
        w = w_next;
        u = step.u;

        if let Some(reason) = stop.check(delta_w + delta_u, prev_obj, obj) {
            history.stop_reason = Some(reason);
            break;
        }
        prev_obj = obj;
    }
    if history.stop_reason.is_none() {
        history.stop_reason = Some(StopReason::MaxIters);
    }

    let final_spectrum = final_spectrum(w.view(), cfg.k, cfg.gap_tol)?;
    Ok(FitResult {
        w: TaskMatrix::new(w)?,
        u,
        final_spectrum,
        history,
    })
}

pub(crate) fn final_spectrum(
    w: ArrayView2<f64>,
    k: usize,
    gap_tol: f64,
) -> Result<Option<SpectralSolution>> {
    let lap = BipartiteLaplacian::from_weights(w)?;
    if lap.is_zero() {
        return Ok(None);
    }
    spectral::u_update(&lap, k, gap_tol).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{SquaredLoss, Task};
    use ndarray::array;

    fn toy() -> MultiTaskDataset {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        MultiTaskDataset::new(vec![
            Task::new(x.clone(), array![1.0, 0.0, 1.0]).unwrap(),
            Task::new(x, array![0.0, 2.0, 2.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut cfg = TfclConfig::default();
        assert!(cfg.validate(2, 2).is_ok());
        cfg.k = 4;
        assert!(cfg.validate(2, 2).is_err());
        cfg.k = 1;
        cfg.c_safety = 1.0;
        assert!(cfg.validate(2, 2).is_err());
    }

    #[test]
    fn step_constant_must_exceed_lipschitz() {
        let cfg = TfclConfig {
            c: Some(1.0),
            ..TfclConfig::default()
        };
        assert!(cfg.step_constant(2.0).is_err());
        assert!(cfg.step_constant(0.5).is_ok());
        let auto = TfclConfig::default().step_constant(2.0).unwrap();
        assert!((auto - 2.02).abs() < 1e-12);
    }

    #[test]
    fn objective_at_zero_is_loss() {
        let data = toy();
        let loss = SquaredLoss::new(&data);
        let u = uniform_u(4, 2);
        let w = Array2::zeros((2, 2));
        let cfg = TfclConfig::default();
        let j = loss.value(w.view()).unwrap();
        assert_eq!(objective_p(w.view(), u.view(), &loss, &cfg).unwrap(), j);
    }

    #[test]
    fn warm_start_zero_data() {
        let x = Array2::zeros((3, 2));
        let data = MultiTaskDataset::new(vec![Task::new(x, Array1::zeros(3)).unwrap()]).unwrap();
        let w0 = default_w0(&data).unwrap();
        assert!(w0.view().iter().all(|v| *v == 0.0));
    }

    use ndarray::Array1;

    #[test]
    fn stop_rule_patience() {
        let mut rule = StopRule::new(1e-12, 1e-3);
        for _ in 0..OBJ_PATIENCE - 1 {
            assert_eq!(rule.check(1.0, 1.0, 1.0), None);
        }
        assert_eq!(
            rule.check(1.0, 1.0, 1.0),
            Some(StopReason::ObjectiveTolerance)
        );
        assert_eq!(rule.check(0.0, 1.0, 5.0), Some(StopReason::ParamTolerance));
    }

    #[test]
    fn history_counts_violations() {
        let h = FitHistory {
            initial_objective: 3.0,
            objective: vec![2.0, 2.5, 1.0, 1.0],
            ..FitHistory::default()
        };
        assert_eq!(h.descent_violations(), 1);
    }
}

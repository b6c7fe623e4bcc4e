//! Recovery scores, grouping certificates and convergence summaries.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::bipartite::{connected_components, default_threshold, Grouping};
use crate::data::GroundTruth;
use crate::error::{Result, TfclError};
use crate::personalized::QConfig;
use crate::solver::{FitHistory, StopReason, TfclConfig, DESCENT_TOL};

/// Support and grouping agreement between a fitted matrix and the truth.
///
/// Precision of an empty predicted support is 1.0 by convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted_support: usize,
    pub true_support: usize,
    pub true_positives: usize,
    pub components: usize,
    pub true_groups: usize,
    pub rand_index: f64,
}

/// Scores `|W_ij| > threshold` against the block support of `gt`.
///
/// `threshold = None` uses `1e-8 * max|W|`.
pub fn recovery_report(
    w: ArrayView2<f64>,
    gt: &GroundTruth,
    threshold: Option<f64>,
) -> Result<RecoveryReport> {
    if w.dim() != gt.w_star.dim() {
        return Err(TfclError::DimensionMismatch(format!(
            "W is {:?}, ground truth is {:?}",
            w.dim(),
            gt.w_star.dim()
        )));
    }
    let threshold = threshold.unwrap_or_else(|| default_threshold(w));
    let (d, t) = w.dim();
    let (mut tp, mut predicted, mut truth) = (0, 0, 0);
    for i in 0..d {
        for j in 0..t {
            let p = w[[i, j]].abs() > threshold;
            let s = gt.in_support(i, j);
            predicted += usize::from(p);
            truth += usize::from(s);
            tp += usize::from(p && s);
        }
    }
    let precision = if predicted == 0 {
        1.0
    } else {
        tp as f64 / predicted as f64
    };
    let recall = if truth == 0 {
        1.0
    } else {
        tp as f64 / truth as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let grouping = connected_components(w, threshold)?;
    let true_labels: Vec<usize> = gt
        .feature_block
        .iter()
        .chain(&gt.task_block)
        .copied()
        .collect();
    Ok(RecoveryReport {
        threshold,
        precision,
        recall,
        f1,
        predicted_support: predicted,
        true_support: truth,
        true_positives: tp,
        components: grouping.count,
        true_groups: gt.block_count(),
        rand_index: rand_index(&grouping.labels, &true_labels),
    })
}

/// Fraction of node pairs on which two partitions agree.
pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same nodes");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            agree += usize::from((a[i] == a[j]) == (b[i] == b[j]));
        }
    }
    agree as f64 / (n * (n - 1) / 2) as f64
}

/// Regularization weights feeding the certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateParams {
    pub k: usize,
    /// Weight of the graph term.
    pub alpha1: f64,
    /// Ridge weight on the grouped matrix.
    pub alpha2: f64,
}

impl From<&TfclConfig> for CertificateParams {
    fn from(cfg: &TfclConfig) -> Self {
        Self {
            k: cfg.k,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
        }
    }
}

impl From<&QConfig> for CertificateParams {
    fn from(cfg: &QConfig) -> Self {
        Self {
            k: cfg.k,
            alpha1: cfg.lam_graph,
            alpha2: cfg.lam_g,
        }
    }
}

/// A-posteriori grouping guarantee quantities.
///
/// `varpi` is the largest loss-gradient entry observed during the run, an
/// empirical stand-in for the sup over a norm ball, so `empirical` is
/// always true. `rho`, `xi` and both booleans are absent or false when
/// `lambda_k1` is numerically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingCertificate {
    pub empirical: bool,
    pub applicable: bool,
    pub epsilon_t: f64,
    pub c: f64,
    pub varpi: f64,
    pub c0: f64,
    pub kappa0: f64,
    pub delta1: f64,
    pub delta2: Option<f64>,
    pub beta: f64,
    pub rho: Option<f64>,
    pub xi: Option<f64>,
    pub lambda_k: f64,
    pub lambda_k1: f64,
    pub no_false_positive_condition: bool,
    pub correct_grouping_condition: Option<bool>,
}

/// Eigenvalues below this (relative to the spectrum scale) count as zero.
const ZERO_EIG_REL: f64 = 1e-10;

/// Evaluates the grouping certificate by direct substitution.
///
/// `eigenvalues` is the ascending spectrum of the final Laplacian,
/// `group_sizes` the node count of each ground-truth group and `delta0` an
/// optional lower bound on the pre-prox magnitudes.
pub fn grouping_certificate(
    history: &FitHistory,
    eigenvalues: &[f64],
    params: &CertificateParams,
    group_sizes: &[usize],
    delta0: Option<f64>,
) -> Result<GroupingCertificate> {
    let n = eigenvalues.len();
    let k = params.k;
    if k == 0 || k >= n {
        return Err(TfclError::InvalidInput(format!(
            "lambda_(k+1) needs k < {n}, got k = {k}"
        )));
    }
    let mut sizes: Vec<usize> = group_sizes.iter().copied().filter(|s| *s > 0).collect();
    if sizes.is_empty() {
        return Err(TfclError::InvalidInput("group sizes are empty".into()));
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let n1 = sizes[0] as f64;
    let n2 = *sizes.get(1).unwrap_or(&sizes[0]) as f64;
    let beta = 1.0 / n1 + 1.0 / n2;

    let epsilon_t = history.final_objective();
    let c = history.step_constant;
    let varpi = history.grad_inf_norm.iter().copied().fold(0.0, f64::max);
    let c0 = (2.0 / params.alpha2 * epsilon_t).sqrt();
    let kappa0 = c0 + varpi / c;
    let delta1 = c / params.alpha1 * kappa0;
    let delta2 = delta0.map(|d0| c / params.alpha1 * d0);

    let lambda_k = eigenvalues[k - 1];
    let lambda_k1 = eigenvalues[k];
    let scale = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let applicable = lambda_k1 > ZERO_EIG_REL * (1.0 + scale);

    let (rho, xi) = if applicable {
        let rho = c0 / lambda_k1;
        let xi = rho * ((n as f64).sqrt() + 2f64.sqrt());
        (Some(rho), Some(xi))
    } else {
        (None, None)
    };

    let (nfp, correct) = match xi {
        Some(xi) => {
            let margin = 8.0 * 2f64.sqrt() * xi;
            let gap = lambda_k1 > lambda_k && lambda_k >= 0.0;
            let base = gap && 2f64.sqrt() / 32.0 * beta > xi;
            let nfp = base && margin < delta1 && delta1 < beta - margin;
            let correct =
                delta2.map(|d2| base && margin < delta1.min(d2) && delta1.max(d2) < beta - margin);
            (nfp, correct)
        }
        None => (false, delta2.map(|_| false)),
    };

    Ok(GroupingCertificate {
        empirical: true,
        applicable,
        epsilon_t,
        c,
        varpi,
        c0,
        kappa0,
        delta1,
        delta2,
        beta,
        rho,
        xi,
        lambda_k,
        lambda_k1,
        no_false_positive_condition: nfp,
        correct_grouping_condition: correct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: Option<StopReason>,
    pub descent_violations: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub last_delta_w: Option<f64>,
    pub last_delta_u: Option<f64>,
    pub min_breve_delta: Option<f64>,
    /// `(1/t) sum_{s<=t} g_s^2` for each `t`.
    pub running_mean_sq_subgrad: Vec<f64>,
    pub quarter_running_mean: Option<f64>,
    pub final_running_mean: Option<f64>,
    /// Least-squares `a` in `running_mean_t ~ a / t`.
    pub envelope_coefficient: Option<f64>,
    pub stagnated: bool,
}

impl ConvergenceReport {
    /// `final / quarter` of the running mean; `None` if undefined.
    pub fn rate_ratio(&self) -> Option<f64> {
        match (self.quarter_running_mean, self.final_running_mean) {
            (Some(q), Some(f)) if q > 0.0 => Some(f / q),
            _ => None,
        }
    }
}

pub fn running_mean_sq(values: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, g)| {
            acc += g * g;
            acc / (i + 1) as f64
        })
        .collect()
}

/// Summarizes a fit history.
///
/// A history counts as stagnated when it has at least two iterations and
/// the objective never moved from its initial value.
pub fn convergence_report(history: &FitHistory) -> ConvergenceReport {
    let iters = history.iterations();
    let running = running_mean_sq(&history.subgrad_bound);
    let quarter = if iters == 0 {
        None
    } else {
        running.get(iters.div_ceil(4) - 1).copied()
    };
    let envelope = if running.is_empty() {
        None
    } else {
        let (num, den) = running
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(num, den), (i, m)| {
                let inv = 1.0 / (i + 1) as f64;
                (num + m * inv, den + inv * inv)
            });
        Some(num / den)
    };
    let f0 = history.initial_objective;
    let stagnated = iters >= 2
        && history
            .objective
            .iter()
            .all(|f| (f - f0).abs() <= DESCENT_TOL * (1.0 + f0.abs()));
    let min_breve = history
        .breve_delta
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    ConvergenceReport {
        iterations: iters,
        converged: history.converged(),
        stop_reason: history.stop_reason,
        descent_violations: history.descent_violations(),
        initial_objective: f0,
        final_objective: history.final_objective(),
        last_delta_w: history.delta_w.last().copied(),
        last_delta_u: history.delta_u.last().copied(),
        min_breve_delta: min_breve,
        quarter_running_mean: quarter,
        final_running_mean: running.last().copied(),
        running_mean_sq_subgrad: running,
        envelope_coefficient: envelope,
        stagnated,
    }
}

/// Ground-truth groups as a [`Grouping`] over the `d + T` nodes.
pub fn true_grouping(gt: &GroundTruth) -> Grouping {
    let labels: Vec<usize> = gt
        .feature_block
        .iter()
        .chain(&gt.task_block)
        .copied()
        .collect();
    Grouping {
        count: gt.block_count(),
        labels,
    }
}

//! Closed-form proximal operators used by the solvers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Result, TfclError};

/// Distances below this are treated as roundoff and clamped.
const DISTANCE_TOL: f64 = 1e-10;

/// Weights of the W-subproblem `1/2||W - W~||^2 + (a1/C) <D, |W|> + (a2/2C) ||W||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub c: f64,
}

impl ProxWeights {
    pub fn new(alpha1: f64, alpha2: f64, c: f64) -> Result<Self> {
        if !(alpha1 >= 0.0) || !(alpha2 >= 0.0) || !(c > 0.0) || !c.is_finite() {
            return Err(TfclError::InvalidInput(format!(
                "prox weights need alpha1 >= 0, alpha2 >= 0, C > 0; got ({alpha1}, {alpha2}, {c})"
            )));
        }
        Ok(Self { alpha1, alpha2, c })
    }

    /// Scale applied to `|W~|` before thresholding.
    pub fn shrink(&self) -> f64 {
        1.0 / (1.0 + self.alpha2 / self.c)
    }

    /// Multiplier of `D` in the threshold.
    pub fn threshold_scale(&self) -> f64 {
        self.alpha1 / (self.c + self.alpha2)
    }
}

/// `sgn(W~) (|W~| / (1 + a2/C) - a1/(C + a2) D)_+`, elementwise.
///
/// Entries exactly at the threshold map to zero.
pub fn w_prox(
    w_tilde: ArrayView2<f64>,
    dist: ArrayView2<f64>,
    weights: &ProxWeights,
) -> Result<Array2<f64>> {
    if w_tilde.dim() != dist.dim() {
        return Err(TfclError::DimensionMismatch(format!(
            "W~ is {:?} but D is {:?}",
            w_tilde.dim(),
            dist.dim()
        )));
    }
    if let Some(bad) = dist.iter().find(|v| !(**v >= -DISTANCE_TOL)) {
        return Err(TfclError::InvalidInput(format!(
            "distance matrix has a negative entry {bad}"
        )));
    }
    let shrink = weights.shrink();
    let scale = weights.threshold_scale();
    let mut out = Array2::zeros(w_tilde.raw_dim());
    Zip::from(&mut out)
        .and(&w_tilde)
        .and(&dist)
        .for_each(|o, &wt, &dv| {
            let mag = (wt * shrink).abs() - scale * dv.max(0.0);
            *o = if mag > 0.0 { wt.signum() * mag } else { 0.0 };
        });
    Ok(out)
}

/// `argmin_x 1/2||x - v||^2 + lam/2 ||x||^2 = v / (1 + lam)`.
pub fn l2_prox(v: ArrayView1<f64>, lam: f64) -> Array1<f64> {
    debug_assert!(lam >= 0.0);
    v.mapv(|x| x / (1.0 + lam))
}

/// Column-wise group shrinkage, the prox of `lam * sum_j ||M_j||_2`.
pub fn column_group_prox(m: ArrayView2<f64>, lam: f64) -> Array2<f64> {
    debug_assert!(lam >= 0.0);
    let mut out = m.to_owned();
    for mut col in out.columns_mut() {
        let norm = col.dot(&col).sqrt();
        let factor = if norm > lam { 1.0 - lam / norm } else { 0.0 };
        col.mapv_inplace(|x| x * factor);
    }
    out
}

/// Soft thresholding `sgn(v) (|v| - lam)_+`.
pub fn soft_threshold(v: f64, lam: f64) -> f64 {
    let mag = v.abs() - lam;
    if mag > 0.0 {
        v.signum() * mag
    } else {
        0.0
    }
}

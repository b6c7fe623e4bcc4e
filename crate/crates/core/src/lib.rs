//! Task-feature collaborative learning.
//!
//! Multi-task linear models regularized by the bottom-`k` eigenvalue sum of
//! the task-feature bipartite graph Laplacian, fitted with an alternating
//! closed-form U-update / proximal-gradient W-update, plus a personalized
//! consensus/grouping/outlier extension trained with a squared AUC loss.

// `!(x >= 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bipartite;
pub mod cli;
pub mod data;
pub mod diagnostics;
mod error;
pub mod linalg;
pub mod losses;
pub mod personalized;
pub mod prox;
pub mod solver;
pub mod spectral;

pub use bipartite::{BipartiteLaplacian, Grouping, TaskMatrix};
pub use error::{Result, TfclError};
pub use losses::{AucLoss, MultiTaskDataset, MultiTaskLoss, SquaredLoss, Task};
pub use personalized::{PersonalizedParams, QConfig};
pub use solver::{FitHistory, TfclConfig};
pub use spectral::{EigenSystem, SpectralSolution};

//! Baselines and metrics: kernel density estimates, entropic optimal
//! transport, grid L2 error, empirical CDFs and ROC analysis.

mod kde;
mod metrics;
mod ot;

pub use kde::{silverman_factor, KdeModel, BANDWIDTH_FLOOR};
pub use metrics::{ecdf, ecdf_distance, grid_l2, ks_statistic, rarity_scores, roc_auc, EcdfComparison, RocCurve};
pub use ot::{ot_distance, sinkhorn_ot, subsample_rows, OtOptions, SinkhornResult};

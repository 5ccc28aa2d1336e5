//! Linear non-Gaussian causal discovery with a sink-constrained target,
//! least-squares SEM refits and causal feature ranking.

mod dag;
mod lingam;
mod ranking;
mod sem;

pub use dag::{WeightScale, WeightedDag};
pub use lingam::{discover_lingam, DEFAULT_PRUNE_THRESHOLD};
pub use ranking::{rank_features, select_top_k, FeatureRanking, StrengthMode};
pub use sem::fit_sem_weights;

/// Column-wise mean and sample standard deviation.
pub(crate) fn column_stats(x: &nalgebra::DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    (0..x.ncols())
        .map(|j| crate::dataio::normalize_mean_std(x.column(j).iter().copied()))
        .unzip()
}

//! Tabular feature data: ingestion, validation, normalization, splitting and persistence.

mod fingerprint;
mod normalize;
mod table;

pub use fingerprint::{Fingerprint, FingerprintTable};
pub use normalize::{fit_normalizer, Normalizer};
pub(crate) use normalize::mean_std as normalize_mean_std;
pub use table::{
    load_feature_table, split_rows, write_feature_table, FeatureTable, LoadReport, Schema,
    DEFAULT_SPLIT_SEED, DEFAULT_TEST_FRACTION,
};

/// Shortest representation that parses back to the identical `f64`.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

//! Stage orchestration behind the command-line interface. Each stage reads its
//! inputs from files, writes plain CSV/text outputs into the output directory and
//! records a manifest with input hashes, parameters, seed and duration.

mod config;
mod manifest;
mod stages;

pub use config::{PipelineConfig, SeedName, SEED_ENV};
pub use manifest::{sha256_file, stable_lines, Manifest, VOLATILE_KEYS};
pub use stages::*;

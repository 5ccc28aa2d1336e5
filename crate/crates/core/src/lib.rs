//! Causal discovery and causally informed data selection over molecular feature tables.
//!
//! The pipeline clusters a descriptor table into subsets, discovers a linear
//! non-Gaussian DAG with the design target as a sink, greedily assembles a small
//! dataset whose graph matches a reference graph, plans per-molecule interventions
//! on the fitted SEM, and matches the intervened feature vectors to real molecules.

pub mod active;
pub mod causal;
pub mod cluster;
pub mod dataio;
pub mod error;
pub mod graphdist;
pub mod intervene;
pub mod kv;
mod linalg;
pub mod matching;
pub mod pipeline;
pub mod regress;
pub mod synth;

pub use error::{Error, ErrorKind, Result};

//! Measuring and dissociating syntactic and semantic structure in sentence
//! representations.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`tensorstore`]: corpus manifests, activation dumps, aggregation and preprocessing
//! - [`simindex`]: distance ranks, information imbalance and the symmetric similarity score
//! - [`centroids`]: syntactic/semantic centroids and projection ablation
//! - [`decompose`]: squared-norm fractions along centroid directions
//! - [`probes`]: POS-template logistic probe and paraphrase recall@k
//! - [`synthlab`]: synthetic corpora with planted directions
//! - [`pipeline`]: experiment configuration, orchestration, CSV and SVG output

pub mod centroids;
pub mod decompose;
pub mod error;
pub mod pipeline;
pub mod probes;
pub mod simindex;
pub mod synthlab;
pub mod tensorstore;

pub use error::{Error, Result};

//! Graph-convolutional recurrent forecasting with learned node pruning.
//!
//! The model learns, during training, which graph nodes to keep: a raw mask
//! vector is clamped to {0,1}, pruned nodes have their inputs replaced by a
//! learned per-node bias, and a usage penalty folded multiplicatively into
//! the prediction loss pushes the kept set toward a target budget. Around
//! that core sit an in-house reverse-mode tape, the factorized adaptive graph
//! convolution, a GRU built from it, baseline pruning strategies, evaluation
//! metrics, and the spatial-analysis suite (node-usage frequencies, Moran's I
//! with permutation tests) used to interpret the learned masks.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod params;
pub mod report;
pub mod spatial;
pub mod stats;
pub mod train;

pub use error::{Error, Result};

//! Test-time structural alignment for graph neural networks.
//!
//! A GraphSAGE encoder with a batch-normalized MLP classifier is pretrained on
//! a labeled source graph. At test time its predictions on a structure-shifted
//! target graph are adapted without touching the frozen weights: messages are
//! reweighted by source/target neighbor-label ratios, self and neighbor paths
//! are remixed with learned degree-conditioned weights, and the decision
//! boundary is refined by TENT, T3A or LAME.

pub mod csbm;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod graph;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod refine;
pub mod tsa;

mod codec;

pub use error::{Error, Result};

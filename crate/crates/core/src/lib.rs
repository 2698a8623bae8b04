//! Dual-scale interest extraction for sequential recommendation.
//!
//! A global self-attentive encoder summarises a user's sequence into one
//! preference vector; a local extractor splits the same sequence into K
//! interest vectors, guided by that preference; the two are aggregated into
//! the vector used for retrieval. Everything runs on `f64` with a small
//! reverse-mode tape ([`graph`]), so gradients can be checked exactly.

pub mod aggregate;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod interest;
pub mod losses;
pub mod model;
pub mod params;
pub mod sweep;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{TrainConfig, Variant};
pub use corpus::Corpus;
pub use error::{DsieError, Result};
pub use eval::{EvalReport, Mode};
pub use exec::Execution;
pub use params::ModelParams;

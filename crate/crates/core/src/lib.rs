//! Bucket-based top-k collection and re-ranking for large-k approximate
//! nearest neighbor search over an IVF index.

pub mod bbc;
pub mod bench;
pub mod collectors;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ivf;
pub mod kmeans;
pub mod metric;
pub mod quant;
pub mod search;

pub use error::{BbcError, Result};
pub use metric::{Candidate, Metric, ResultSet};

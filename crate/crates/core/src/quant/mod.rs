//! Quantizers consumed by the search pipelines: an unbounded product
//! quantizer and a bounded interval quantizer with guaranteed distance bounds.

pub mod bounded;
pub mod pq;

pub use bounded::{BoundedCode, BoundedQuantizer, BqQuery, DEFAULT_LEVELS};
pub use pq::{pq_train, LookupTable, PqCodebook, DEFAULT_BITS, DEFAULT_SUB_DIM};

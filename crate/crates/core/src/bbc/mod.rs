//! Bucket-based result buffer: a top-k collector that appends candidates to
//! distance-range buckets instead of maintaining a heap.

mod buffer;
mod codebook;

pub use buffer::{collect_union, threshold_over, Bucket, ResultBuffer};
pub use codebook::{
    build_codebook, select_num_buckets, theorem1_empirical_mae, BucketCodebook, MaeReport, DEFAULT_L1_BYTES, N_EW,
};

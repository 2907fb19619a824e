//! Accuracy and throughput measures used by the benchmark harness.

use std::collections::HashSet;
use std::time::Duration;

use crate::error::{invalid, Result};
use crate::metric::ResultSet;

/// Fraction of `truth` recovered by `retrieved`.
///
/// A retrieved id counts as a hit when it is in the truth set, or when its
/// distance is no larger than the true k-th distance (ties at the boundary).
/// Retrieved distances must be exact or upper bounds of the exact distance.
/// A short `retrieved` set is allowed; it is still scored against `truth.k`.
pub fn recall_at_k(retrieved: &ResultSet, truth: &ResultSet) -> Result<f64> {
    if truth.is_empty() {
        return invalid("recall against an empty ground truth");
    }
    if retrieved.len() > truth.len() {
        return invalid(format!(
            "retrieved {} items but ground truth has {}",
            retrieved.len(),
            truth.len()
        ));
    }
    let kth = truth.items.iter().map(|c| c.dist).fold(f32::NEG_INFINITY, f32::max);
    let ids: HashSet<u32> = truth.items.iter().map(|c| c.id).collect();
    let mut seen = HashSet::with_capacity(retrieved.len());
    let hits = retrieved
        .items
        .iter()
        .filter(|c| seen.insert(c.id))
        .filter(|c| ids.contains(&c.id) || c.dist <= kth)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeError {
    pub value: f64,
    /// Ranks excluded because the true distance was zero.
    pub skipped: usize,
}

/// Mean over ranks of `(retrieved[i] - truth[i]) / |truth[i]|`, both sorted ascending by
/// exact distance. Ranks whose true distance is zero are skipped and counted.
pub fn relative_error(retrieved: &[f32], truth: &[f32]) -> Result<RelativeError> {
    if retrieved.len() > truth.len() {
        return invalid("retrieved longer than ground truth");
    }
    let mut sum = 0.0f64;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (&r, &t) in retrieved.iter().zip(truth) {
        if t == 0.0 {
            skipped += 1;
            continue;
        }
        sum += (r as f64 - t as f64) / (t as f64).abs();
        used += 1;
    }
    let value = if used == 0 { 0.0 } else { sum / used as f64 };
    Ok(RelativeError { value, skipped })
}

pub fn qps(num_queries: usize, elapsed: Duration) -> Result<f64> {
    let secs = elapsed.as_secs_f64();
    if secs <= 0.0 {
        return invalid("zero duration");
    }
    Ok(num_queries as f64 / secs)
}

//! Query pipelines over an [`IvfIndex`].

mod bounded;
mod pq;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

pub use bounded::{search_ivf_bq, search_ivf_bq_bbc, search_ivf_bq_min, BoundedBbc, MinRerank};
pub use pq::{search_ivf_pq, search_ivf_pq_bbc};

use crate::bbc::{build_codebook, select_num_buckets, BucketCodebook, DEFAULT_L1_BYTES, N_EW};
use crate::collectors::{AnyCollector, Collector, CollectorKind};
use crate::error::{invalid, BbcError, Result};
use crate::ivf::{IvfIndex, PostingList};
use crate::metric::{distance_f64, key_unchecked, Candidate, ResultSet};
use crate::quant::{DEFAULT_BITS, DEFAULT_SUB_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pipeline {
    IvfFlat,
    IvfPq,
    IvfPqBbc,
    IvfBq,
    IvfBqBbc,
    IvfBqMin,
    BruteForce,
}

impl Pipeline {
    pub const ALL: [Pipeline; 7] = [
        Pipeline::IvfFlat,
        Pipeline::IvfPq,
        Pipeline::IvfPqBbc,
        Pipeline::IvfBq,
        Pipeline::IvfBqBbc,
        Pipeline::IvfBqMin,
        Pipeline::BruteForce,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::IvfFlat => "ivf-flat",
            Pipeline::IvfPq => "ivf-pq",
            Pipeline::IvfPqBbc => "ivf-pq-bbc",
            Pipeline::IvfBq => "ivf-bq",
            Pipeline::IvfBqBbc => "ivf-bq-bbc",
            Pipeline::IvfBqMin => "ivf-bq-min",
            Pipeline::BruteForce => "brute-force",
        }
    }

    /// Pipelines that re-rank a candidate pool of size `n_cand`.
    pub fn uses_pq(self) -> bool {
        matches!(self, Pipeline::IvfPq | Pipeline::IvfPqBbc)
    }

    pub fn uses_bq(self) -> bool {
        matches!(self, Pipeline::IvfBq | Pipeline::IvfBqBbc | Pipeline::IvfBqMin)
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = BbcError;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or_else(|| BbcError::InvalidParameter(format!("unknown pipeline '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub k: usize,
    pub n_probe: usize,
    /// Candidate pool size of the PQ pipelines; ignored elsewhere.
    pub n_cand: usize,
    pub collector: CollectorKind,
    pub pipeline: Pipeline,
    pub l1_bytes: usize,
    /// Overrides the cache-derived bucket count.
    pub buckets: Option<usize>,
    /// Nearest clusters whose keys seed the bucket codebook.
    pub sample_clusters: usize,
    /// Record every re-ranked id in [`QueryStats::reranked_ids`].
    pub trace: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: 10,
            n_probe: 1,
            n_cand: 100,
            collector: CollectorKind::BinaryHeap,
            pipeline: Pipeline::IvfFlat,
            l1_bytes: DEFAULT_L1_BYTES,
            buckets: None,
            sample_clusters: 8,
            trace: false,
        }
    }
}

impl SearchParams {
    pub fn new(pipeline: Pipeline, k: usize, n_probe: usize) -> Self {
        Self {
            pipeline,
            k,
            n_probe,
            n_cand: k,
            ..Default::default()
        }
    }

    /// Bucket count for this index: the override, or the cache rule applied
    /// to the index's PQ shape (d/4 sub-quantizers of 4 bits when absent).
    pub fn num_buckets(&self, index: &IvfIndex) -> Result<usize> {
        if let Some(m) = self.buckets {
            if !(2..=N_EW).contains(&m) {
                return invalid(format!("bucket count {m} must be in 2..={N_EW}"));
            }
            return Ok(m);
        }
        let (n_sub, bits) = match index.pq() {
            Some(pq) => (pq.n_sub(), pq.bits()),
            None => (index.d().div_ceil(DEFAULT_SUB_DIM), DEFAULT_BITS),
        };
        select_num_buckets(self.l1_bytes, n_sub, bits)
    }
}

/// Per-query instrumentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryStats {
    pub scanned_objects: usize,
    /// Exact distance evaluations performed.
    pub reranked_count: usize,
    /// Wall time of the cluster scan, including any re-ranking done inline.
    pub scan_seconds: f64,
    /// Codebook construction, per-cluster threshold refreshes and the final
    /// collection step.
    pub collector_seconds: f64,
    /// Re-ranking done after the scan.
    pub rerank_seconds: f64,
    /// Final threshold bucket of the bucket buffer, when one was used.
    pub final_tau: Option<usize>,
    /// Upper boundary of that bucket, when one was used.
    pub relaxed_threshold: Option<f32>,
    pub num_buckets: usize,
    /// The PQ pool was smaller than `n_cand` because the scan was.
    pub pool_short: bool,
    pub reranked_ids: Vec<u32>,
}

impl QueryStats {
    fn reranked(&mut self, id: u32, trace: bool) {
        self.reranked_count += 1;
        if trace {
            self.reranked_ids.push(id);
        }
    }
}

fn validate(index: &IvfIndex, p: &SearchParams) -> Result<()> {
    if p.k == 0 {
        return invalid("k must be positive");
    }
    if p.pipeline != Pipeline::BruteForce && (p.n_probe == 0 || p.n_probe > index.n_cluster()) {
        return invalid(format!("n_probe={} must be in 1..={}", p.n_probe, index.n_cluster()));
    }
    if p.pipeline.uses_pq() {
        if index.pq().is_none() {
            return Err(BbcError::Unsupported(format!(
                "{} needs PQ codes in the index",
                p.pipeline
            )));
        }
        if p.n_cand < p.k {
            return invalid(format!("n_cand={} must be at least k={}", p.n_cand, p.k));
        }
    }
    if p.pipeline.uses_bq() && index.bq().is_none() {
        return Err(BbcError::Unsupported(format!(
            "{} needs bounded codes in the index",
            p.pipeline
        )));
    }
    Ok(())
}

/// Runs one query through the pipeline named in `p`.
pub fn search(index: &IvfIndex, q: &[f32], p: &SearchParams) -> Result<(ResultSet, QueryStats)> {
    validate(index, p)?;
    let q = index.prepare_query(q)?;
    match p.pipeline {
        Pipeline::IvfFlat => search_ivf_flat(index, &q, p),
        Pipeline::IvfPq => search_ivf_pq(index, &q, p),
        Pipeline::IvfPqBbc => search_ivf_pq_bbc(index, &q, p),
        Pipeline::IvfBq => search_ivf_bq(index, &q, p),
        Pipeline::IvfBqBbc => search_ivf_bq_bbc(index, &q, p),
        Pipeline::IvfBqMin => search_ivf_bq_min(index, &q, p),
        Pipeline::BruteForce => search_brute_force(index, &q, p),
    }
}

/// Routed clusters plus how many leading ones form the codebook sample:
/// at least `sample_clusters`, extended until `min_objects` are covered.
pub(crate) fn route_with_sample(
    index: &IvfIndex,
    q: &[f32],
    p: &SearchParams,
    min_objects: usize,
) -> Result<(Vec<usize>, usize)> {
    let clusters = index.route(q, p.n_probe)?;
    let mut take = p.sample_clusters.clamp(1, clusters.len());
    let mut seen: usize = clusters[..take].iter().map(|&c| index.cluster(c).len()).sum();
    while seen < min_objects && take < clusters.len() {
        seen += index.cluster(clusters[take]).len();
        take += 1;
    }
    Ok((clusters, take))
}

/// Codebook over `sample`, or a single-bucket one when it is empty.
pub(crate) fn codebook_from(sample: &[f32], k: usize, m: usize) -> Result<BucketCodebook> {
    if sample.is_empty() {
        return Ok(BucketCodebook::degenerate(0.0));
    }
    build_codebook(sample, k, m)
}

/// Offers `key(list, i)` for every routed object to a collector of `kind`
/// holding `k` items. The bucket buffer's codebook is built from the keys of
/// the sample clusters, which are evaluated once and replayed.
pub(crate) fn scan_collect<F>(
    index: &IvfIndex,
    q: &[f32],
    p: &SearchParams,
    kind: CollectorKind,
    k: usize,
    stats: &mut QueryStats,
    mut key: F,
) -> Result<ResultSet>
where
    F: FnMut(&PostingList, usize) -> f32,
{
    let scan_start = Instant::now();
    let mut collector_time = 0.0;
    let (clusters, sample_len) = route_with_sample(index, q, p, k)?;
    let mut collector;
    let mut rest = &clusters[..];
    if kind == CollectorKind::BucketBuffer {
        let mut sample: Vec<Vec<Candidate>> = Vec::with_capacity(sample_len);
        for &c in &clusters[..sample_len] {
            let list = index.cluster(c);
            sample.push(
                (0..list.len())
                    .map(|i| Candidate::new(list.ids()[i], key(list, i)))
                    .collect(),
            );
        }
        let t = Instant::now();
        let keys: Vec<f32> = sample.iter().flatten().map(|c| c.dist).collect();
        let m = p.num_buckets(index)?;
        let cb = codebook_from(&keys, k, m)?;
        stats.num_buckets = cb.num_buckets();
        collector = AnyCollector::new(kind, k, Some(cb))?;
        collector_time += t.elapsed().as_secs_f64();
        for part in &sample {
            for c in part {
                collector.offer(c.id, c.dist);
            }
            stats.scanned_objects += part.len();
            let t = Instant::now();
            collector.seal_cluster();
            collector_time += t.elapsed().as_secs_f64();
        }
        rest = &clusters[sample_len..];
    } else {
        collector = AnyCollector::new(kind, k, None)?;
    }
    for &c in rest {
        let list = index.cluster(c);
        let ids = list.ids();
        for i in 0..list.len() {
            collector.offer(ids[i], key(list, i));
        }
        stats.scanned_objects += list.len();
        let t = Instant::now();
        collector.seal_cluster();
        collector_time += t.elapsed().as_secs_f64();
    }
    stats.scan_seconds += scan_start.elapsed().as_secs_f64();
    let t = Instant::now();
    if let AnyCollector::BucketBuffer(b) = &collector {
        stats.final_tau = b.buffer().threshold_bucket();
        stats.relaxed_threshold = Some(b.buffer().relaxed_threshold());
    }
    let res = collector.finalize();
    collector_time += t.elapsed().as_secs_f64();
    stats.collector_seconds += collector_time;
    Ok(res)
}

/// Exact scan of the routed clusters into the configured collector.
pub fn search_ivf_flat(index: &IvfIndex, q: &[f32], p: &SearchParams) -> Result<(ResultSet, QueryStats)> {
    let mut stats = QueryStats::default();
    let metric = index.metric();
    let res = scan_collect(index, q, p, p.collector, p.k, &mut stats, |list, i| {
        key_unchecked(q, list.raw(i), metric)
    })?;
    stats.reranked_count = stats.scanned_objects;
    Ok((res, stats))
}

/// Exhaustive scan with 64-bit distances, ordered by (distance, id) exactly
/// like the ground-truth generator.
pub fn search_brute_force(index: &IvfIndex, q: &[f32], p: &SearchParams) -> Result<(ResultSet, QueryStats)> {
    let start = Instant::now();
    let metric = index.metric();
    let mut all: Vec<(f64, u32)> = Vec::with_capacity(index.len());
    for id in 0..index.len() as u32 {
        all.push((distance_f64(q, index.vector(id), metric)?, id));
    }
    let k = p.k.min(all.len());
    let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    let stats = QueryStats {
        scanned_objects: index.len(),
        reranked_count: index.len(),
        scan_seconds: start.elapsed().as_secs_f64(),
        ..Default::default()
    };
    let items = all.into_iter().map(|(d, id)| Candidate::new(id, d as f32)).collect();
    Ok((ResultSet::new(p.k, items), stats))
}

/// Exact top-k over the `n_probe` routed clusters, using the same f32 keys
/// and (key, id) order as the pipelines. A test oracle.
pub fn restricted_exact_topk(index: &IvfIndex, q: &[f32], n_probe: usize, k: usize) -> Result<ResultSet> {
    let q = index.prepare_query(q)?;
    let metric = index.metric();
    let mut all = Vec::new();
    for c in index.route(&q, n_probe)? {
        let list = index.cluster(c);
        for i in 0..list.len() {
            all.push(Candidate::new(list.ids()[i], key_unchecked(&q, list.raw(i), metric)));
        }
    }
    all.sort_unstable_by(Candidate::cmp_key);
    all.truncate(k);
    Ok(ResultSet::new(k, all))
}

/// Exact comparison key of stored object `id` against a prepared query, by
/// random access.
#[inline]
pub fn exact_by_id(index: &IvfIndex, q: &[f32], id: u32) -> f32 {
    key_unchecked(q, index.vector(id), index.metric())
}

/// Sorts a candidate pool by (key, id) and keeps the first `k`.
pub(crate) fn top_k(mut pool: Vec<Candidate>, k: usize) -> ResultSet {
    if pool.len() > k {
        pool.select_nth_unstable_by(k, Candidate::cmp_key);
        pool.truncate(k);
    }
    pool.sort_unstable_by(Candidate::cmp_key);
    ResultSet::new(k, pool)
}

#[cfg(test)]
mod tests;

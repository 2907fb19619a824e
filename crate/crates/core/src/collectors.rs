//! Top-k collectors behind one interface: the baselines the bucket buffer is
//! measured against, plus an adapter for the bucket buffer itself.
//!
//! Every collector orders candidates by (dist, id), so for any stream all
//! kinds return exactly the same top-k set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bbc::{build_codebook, BucketCodebook, ResultBuffer};
use crate::error::{invalid, BbcError, Result};
use crate::metric::{Candidate, ResultSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CollectorKind {
    BinaryHeap,
    DaryHeap,
    SortedBuffer,
    LazyBuffer,
    BucketBuffer,
}

impl CollectorKind {
    pub const ALL: [CollectorKind; 5] = [
        CollectorKind::BinaryHeap,
        CollectorKind::DaryHeap,
        CollectorKind::SortedBuffer,
        CollectorKind::LazyBuffer,
        CollectorKind::BucketBuffer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CollectorKind::BinaryHeap => "binary-heap",
            CollectorKind::DaryHeap => "dary-heap",
            CollectorKind::SortedBuffer => "sorted-buffer",
            CollectorKind::LazyBuffer => "lazy-buffer",
            CollectorKind::BucketBuffer => "bucket-buffer",
        }
    }
}

impl fmt::Display for CollectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CollectorKind {
    type Err = BbcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "binary-heap" | "heap" => Ok(CollectorKind::BinaryHeap),
            "dary-heap" | "d-ary-heap" | "d-heap" => Ok(CollectorKind::DaryHeap),
            "sorted-buffer" | "sorted" => Ok(CollectorKind::SortedBuffer),
            "lazy-buffer" | "lazy" => Ok(CollectorKind::LazyBuffer),
            "bucket-buffer" | "bucket" | "rb" => Ok(CollectorKind::BucketBuffer),
            other => invalid(format!("unknown collector '{other}'")),
        }
    }
}

pub trait Collector {
    fn offer(&mut self, id: u32, dist: f32);

    /// Called after each scanned cluster.
    fn seal_cluster(&mut self);

    /// Keys at or above this value cannot enter the top-k. Infinite until
    /// the collector holds k candidates.
    fn threshold(&self) -> f32;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The top-k of everything offered, in no particular order.
    fn finalize(&mut self) -> ResultSet;
}

#[derive(Debug, Clone, Copy)]
struct MaxItem(Candidate);

impl PartialEq for MaxItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for MaxItem {}

impl PartialOrd for MaxItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MaxItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp_key(&other.0)
    }
}

/// Bounded max-heap of size k (the standard library heap).
#[derive(Debug, Clone)]
pub struct BinaryHeapCollector {
    heap: BinaryHeap<MaxItem>,
    k: usize,
}

impl BinaryHeapCollector {
    pub fn new(k: usize) -> Self {
        Self {
            heap: BinaryHeap::with_capacity(k + 1),
            k,
        }
    }

    pub fn peek(&self) -> Option<Candidate> {
        self.heap.peek().map(|m| m.0)
    }
}

impl Collector for BinaryHeapCollector {
    #[inline]
    fn offer(&mut self, id: u32, dist: f32) {
        let c = Candidate::new(id, dist);
        if self.heap.len() < self.k {
            self.heap.push(MaxItem(c));
        } else if let Some(mut top) = self.heap.peek_mut() {
            if c.cmp_key(&top.0) == Ordering::Less {
                *top = MaxItem(c);
            }
        }
    }

    fn seal_cluster(&mut self) {}

    fn threshold(&self) -> f32 {
        if self.heap.len() < self.k {
            f32::INFINITY
        } else {
            self.heap.peek().map_or(f32::INFINITY, |m| m.0.dist)
        }
    }

    fn len(&self) -> usize {
        self.heap.len()
    }

    fn finalize(&mut self) -> ResultSet {
        let items = std::mem::take(&mut self.heap)
            .into_vec()
            .into_iter()
            .map(|m| m.0)
            .collect();
        ResultSet::new(self.k, items)
    }
}

const ARITY: usize = 4;

/// Bounded max-heap of size k with four children per node.
#[derive(Debug, Clone)]
pub struct DaryHeapCollector {
    heap: Vec<Candidate>,
    k: usize,
}

impl DaryHeapCollector {
    pub fn new(k: usize) -> Self {
        Self {
            heap: Vec::with_capacity(k),
            k,
        }
    }

    pub fn peek(&self) -> Option<Candidate> {
        self.heap.first().copied()
    }

    fn sift_up(&mut self, mut i: usize) {
        let item = self.heap[i];
        while i > 0 {
            let parent = (i - 1) / ARITY;
            if self.heap[parent].cmp_key(&item) != Ordering::Less {
                break;
            }
            self.heap[i] = self.heap[parent];
            i = parent;
        }
        self.heap[i] = item;
    }

    fn sift_down(&mut self, mut i: usize) {
        let n = self.heap.len();
        let item = self.heap[i];
        loop {
            let first = i * ARITY + 1;
            if first >= n {
                break;
            }
            let last = (first + ARITY).min(n);
            let mut best = first;
            for c in first + 1..last {
                if self.heap[c].cmp_key(&self.heap[best]) == Ordering::Greater {
                    best = c;
                }
            }
            if self.heap[best].cmp_key(&item) != Ordering::Greater {
                break;
            }
            self.heap[i] = self.heap[best];
            i = best;
        }
        self.heap[i] = item;
    }
}

impl Collector for DaryHeapCollector {
    #[inline]
    fn offer(&mut self, id: u32, dist: f32) {
        let c = Candidate::new(id, dist);
        if self.heap.len() < self.k {
            self.heap.push(c);
            self.sift_up(self.heap.len() - 1);
        } else if self.k > 0 && c.cmp_key(&self.heap[0]) == Ordering::Less {
            self.heap[0] = c;
            self.sift_down(0);
        }
    }

    fn seal_cluster(&mut self) {}

    fn threshold(&self) -> f32 {
        if self.heap.len() < self.k {
            f32::INFINITY
        } else {
            self.heap.first().map_or(f32::INFINITY, |c| c.dist)
        }
    }

    fn len(&self) -> usize {
        self.heap.len()
    }

    fn finalize(&mut self) -> ResultSet {
        ResultSet::new(self.k, std::mem::take(&mut self.heap))
    }
}

/// Ascending array of at most k candidates; every insert shifts the tail.
#[derive(Debug, Clone)]
pub struct SortedBufferCollector {
    items: Vec<Candidate>,
    k: usize,
}

impl SortedBufferCollector {
    pub fn new(k: usize) -> Self {
        Self {
            items: Vec::with_capacity(k + 1),
            k,
        }
    }
}

impl Collector for SortedBufferCollector {
    #[inline]
    fn offer(&mut self, id: u32, dist: f32) {
        let c = Candidate::new(id, dist);
        if self.items.len() == self.k {
            match self.items.last() {
                Some(last) if c.cmp_key(last) == Ordering::Less => {}
                _ => return,
            }
        }
        let pos = self.items.partition_point(|x| x.cmp_key(&c) == Ordering::Less);
        self.items.insert(pos, c);
        if self.items.len() > self.k {
            self.items.pop();
        }
    }

    fn seal_cluster(&mut self) {}

    fn threshold(&self) -> f32 {
        if self.items.len() < self.k {
            f32::INFINITY
        } else {
            self.items.last().map_or(f32::INFINITY, |c| c.dist)
        }
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn finalize(&mut self) -> ResultSet {
        ResultSet::new(self.k, std::mem::take(&mut self.items))
    }
}

/// Unordered buffer that accepts anything below its threshold and compacts
/// to k by partial selection once per cluster.
#[derive(Debug, Clone)]
pub struct LazyBufferCollector {
    items: Vec<Candidate>,
    bound: Option<Candidate>,
    k: usize,
}

impl LazyBufferCollector {
    pub fn new(k: usize) -> Self {
        Self {
            items: Vec::with_capacity(2 * k),
            bound: None,
            k,
        }
    }

    fn compact(&mut self) {
        if self.k == 0 {
            self.items.clear();
            return;
        }
        if self.items.len() > self.k {
            self.items.select_nth_unstable_by(self.k - 1, Candidate::cmp_key);
            self.items.truncate(self.k);
            self.bound = Some(self.items[self.k - 1]);
        } else if self.items.len() == self.k {
            self.bound = self.items.iter().copied().max_by(Candidate::cmp_key);
        }
    }
}

impl Collector for LazyBufferCollector {
    #[inline]
    fn offer(&mut self, id: u32, dist: f32) {
        let c = Candidate::new(id, dist);
        match self.bound {
            Some(b) if c.cmp_key(&b) != Ordering::Less => {}
            _ => self.items.push(c),
        }
    }

    fn seal_cluster(&mut self) {
        self.compact();
    }

    fn threshold(&self) -> f32 {
        self.bound.map_or(f32::INFINITY, |c| c.dist)
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn finalize(&mut self) -> ResultSet {
        self.compact();
        ResultSet::new(self.k, std::mem::take(&mut self.items))
    }
}

/// Adapter exposing [`ResultBuffer`] through the collector interface.
#[derive(Debug, Clone)]
pub struct BucketBufferCollector {
    buffer: ResultBuffer,
}

impl BucketBufferCollector {
    pub fn new(codebook: BucketCodebook, k: usize) -> Self {
        Self {
            buffer: ResultBuffer::new(codebook, k),
        }
    }

    pub fn buffer(&self) -> &ResultBuffer {
        &self.buffer
    }
}

impl Collector for BucketBufferCollector {
    #[inline]
    fn offer(&mut self, id: u32, dist: f32) {
        self.buffer.push(id, dist);
    }

    fn seal_cluster(&mut self) {
        self.buffer.update();
    }

    fn threshold(&self) -> f32 {
        self.buffer.relaxed_threshold()
    }

    fn len(&self) -> usize {
        self.buffer.len()
    }

    fn finalize(&mut self) -> ResultSet {
        self.buffer.collect()
    }
}

/// Any collector kind behind static dispatch.
#[derive(Debug, Clone)]
pub enum AnyCollector {
    BinaryHeap(BinaryHeapCollector),
    DaryHeap(DaryHeapCollector),
    SortedBuffer(SortedBufferCollector),
    LazyBuffer(LazyBufferCollector),
    BucketBuffer(BucketBufferCollector),
}

impl AnyCollector {
    /// `codebook` is required for the bucket buffer and ignored otherwise.
    pub fn new(kind: CollectorKind, k: usize, codebook: Option<BucketCodebook>) -> Result<Self> {
        Ok(match kind {
            CollectorKind::BinaryHeap => AnyCollector::BinaryHeap(BinaryHeapCollector::new(k)),
            CollectorKind::DaryHeap => AnyCollector::DaryHeap(DaryHeapCollector::new(k)),
            CollectorKind::SortedBuffer => AnyCollector::SortedBuffer(SortedBufferCollector::new(k)),
            CollectorKind::LazyBuffer => AnyCollector::LazyBuffer(LazyBufferCollector::new(k)),
            CollectorKind::BucketBuffer => match codebook {
                Some(cb) => AnyCollector::BucketBuffer(BucketBufferCollector::new(cb, k)),
                None => return invalid("bucket-buffer collector needs a codebook"),
            },
        })
    }

    pub fn kind(&self) -> CollectorKind {
        match self {
            AnyCollector::BinaryHeap(_) => CollectorKind::BinaryHeap,
            AnyCollector::DaryHeap(_) => CollectorKind::DaryHeap,
            AnyCollector::SortedBuffer(_) => CollectorKind::SortedBuffer,
            AnyCollector::LazyBuffer(_) => CollectorKind::LazyBuffer,
            AnyCollector::BucketBuffer(_) => CollectorKind::BucketBuffer,
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $c:ident => $e:expr) => {
        match $self {
            AnyCollector::BinaryHeap($c) => $e,
            AnyCollector::DaryHeap($c) => $e,
            AnyCollector::SortedBuffer($c) => $e,
            AnyCollector::LazyBuffer($c) => $e,
            AnyCollector::BucketBuffer($c) => $e,
        }
    };
}

impl Collector for AnyCollector {
    #[inline]
    fn offer(&mut self, id: u32, dist: f32) {
        dispatch!(self, c => c.offer(id, dist))
    }

    fn seal_cluster(&mut self) {
        dispatch!(self, c => c.seal_cluster())
    }

    fn threshold(&self) -> f32 {
        dispatch!(self, c => c.threshold())
    }

    fn len(&self) -> usize {
        dispatch!(self, c => c.len())
    }

    fn finalize(&mut self) -> ResultSet {
        dispatch!(self, c => c.finalize())
    }
}

/// A pre-materialized candidate stream split into clusters, nearest first.
#[derive(Debug, Clone)]
pub struct CandidateStream {
    pub items: Vec<Candidate>,
    /// Exclusive end offset of each cluster in `items`.
    pub cluster_ends: Vec<usize>,
    /// Number of leading clusters the bucket codebook is sampled from.
    pub sample_clusters: usize,
}

impl CandidateStream {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn clusters(&self) -> impl Iterator<Item = &[Candidate]> {
        let mut start = 0;
        self.cluster_ends.iter().map(move |&end| {
            let s = &self.items[start..end];
            start = end;
            s
        })
    }

    /// Distances of the leading sample clusters.
    pub fn sample(&self) -> Vec<f32> {
        let end = match self.sample_clusters {
            0 => 0,
            c => self.cluster_ends[c.min(self.cluster_ends.len()) - 1],
        };
        self.items[..end].iter().map(|c| c.dist).collect()
    }
}

/// Parameters of a synthetic scan trace resembling an IVF traversal:
/// distances concentrated around `mean`, clusters drifting outward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSpec {
    pub n_items: usize,
    pub cluster_size: usize,
    pub mean: f32,
    pub spread: f32,
    pub sample_clusters: usize,
    pub seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            n_items: 2_000_000,
            cluster_size: 2_000,
            mean: 1.0,
            spread: 0.05,
            sample_clusters: 8,
            seed: 7,
        }
    }
}

impl StreamSpec {
    pub fn generate(&self) -> Result<CandidateStream> {
        if self.cluster_size == 0 {
            return invalid("cluster_size must be positive");
        }
        if !(self.spread >= 0.0 && self.mean.is_finite()) {
            return invalid("stream spread must be non-negative and mean finite");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_clusters = self.n_items.div_ceil(self.cluster_size);
        // Cluster offsets sorted ascending so nearer clusters come first.
        let mut offsets: Vec<f32> = (0..n_clusters)
            .map(|_| rng.sample::<f32, _>(StandardNormal).abs() * self.spread)
            .collect();
        offsets.sort_by(f32::total_cmp);
        let mut items = Vec::with_capacity(self.n_items);
        let mut cluster_ends = Vec::with_capacity(n_clusters);
        for (c, off) in offsets.iter().enumerate() {
            let end = ((c + 1) * self.cluster_size).min(self.n_items);
            for id in items.len()..end {
                let z: f32 = rng.sample(StandardNormal);
                let dist = (self.mean + off + z * self.spread).max(0.0);
                items.push(Candidate::new(id as u32, dist));
            }
            cluster_ends.push(end);
        }
        Ok(CandidateStream {
            items,
            cluster_ends,
            sample_clusters: self.sample_clusters,
        })
    }
}

/// Feeds a whole stream through a fresh collector. For the bucket buffer
/// the codebook is built from the stream's sample clusters.
pub fn run_stream(kind: CollectorKind, stream: &CandidateStream, k: usize, num_buckets: usize) -> Result<ResultSet> {
    let codebook = match kind {
        CollectorKind::BucketBuffer => {
            let sample = stream.sample();
            if sample.is_empty() || k == 0 {
                Some(BucketCodebook::degenerate(0.0))
            } else {
                Some(build_codebook(&sample, k, num_buckets)?)
            }
        }
        _ => None,
    };
    let mut collector = AnyCollector::new(kind, k, codebook)?;
    for cluster in stream.clusters() {
        for c in cluster {
            collector.offer(c.id, c.dist);
        }
        collector.seal_cluster();
    }
    Ok(collector.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectorTiming {
    pub kind: CollectorKind,
    pub k: usize,
    pub stream_len: usize,
    pub median: Duration,
    pub samples: Vec<Duration>,
}

/// Times `repetitions` runs of [`run_stream`]. Codebook construction counts
/// as collector time; stream generation does not.
pub fn bench_collector(
    kind: CollectorKind,
    stream: &CandidateStream,
    k: usize,
    num_buckets: usize,
    repetitions: usize,
) -> Result<CollectorTiming> {
    if repetitions == 0 {
        return invalid("repetitions must be positive");
    }
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let res = run_stream(kind, black_box(stream), k, num_buckets)?;
        samples.push(start.elapsed());
        black_box(res);
    }
    let mut sorted = samples.clone();
    sorted.sort();
    Ok(CollectorTiming {
        kind,
        k,
        stream_len: stream.len(),
        median: sorted[(sorted.len() - 1) / 2],
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(stream: &[Candidate], k: usize) -> Vec<u32> {
        let mut all = stream.to_vec();
        all.sort_by(Candidate::cmp_key);
        all.truncate(k);
        let mut ids: Vec<u32> = all.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }

    fn sorted_ids(r: &ResultSet) -> Vec<u32> {
        let mut ids = r.ids();
        ids.sort_unstable();
        ids
    }

    fn small_stream(seed: u64, n: usize, cluster: usize) -> CandidateStream {
        StreamSpec {
            n_items: n,
            cluster_size: cluster,
            mean: 2.0,
            spread: 0.3,
            sample_clusters: 4,
            seed,
        }
        .generate()
        .unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in CollectorKind::ALL {
            assert_eq!(kind.as_str().parse::<CollectorKind>().unwrap(), kind);
        }
        assert!("fib-heap".parse::<CollectorKind>().is_err());
    }

    #[test]
    fn k1_tracks_minimum() {
        let s = small_stream(1, 500, 50);
        let min = s.items.iter().copied().min_by(Candidate::cmp_key).unwrap();
        for kind in CollectorKind::ALL {
            let r = run_stream(kind, &s, 1, 16).unwrap();
            assert_eq!(r.ids(), vec![min.id], "{kind}");
        }
    }

    #[test]
    fn all_kinds_match_full_sort() {
        for seed in 0..1000u64 {
            let n = 200 + (seed as usize * 37) % 800;
            let s = small_stream(seed, n, 64);
            let k = 1 + (seed as usize * 13) % 150;
            let want = oracle(&s.items, k);
            for kind in CollectorKind::ALL {
                let got = sorted_ids(&run_stream(kind, &s, k, 8).unwrap());
                assert_eq!(got, want, "seed {seed} kind {kind}");
            }
        }
    }

    #[test]
    fn ties_resolve_identically() {
        // Coarse distances force many exact ties at the k-th value.
        let items: Vec<Candidate> = (0..3000u32)
            .map(|i| Candidate::new(i, ((i * 7919) % 13) as f32))
            .collect();
        let s = CandidateStream {
            cluster_ends: (1..=30).map(|c| c * 100).collect(),
            items,
            sample_clusters: 5,
        };
        let want = oracle(&s.items, 777);
        for kind in CollectorKind::ALL {
            assert_eq!(sorted_ids(&run_stream(kind, &s, 777, 12).unwrap()), want);
        }
    }

    #[test]
    fn empty_and_identical_streams() {
        let empty = CandidateStream {
            items: vec![],
            cluster_ends: vec![],
            sample_clusters: 0,
        };
        for kind in CollectorKind::ALL {
            let mut c = AnyCollector::new(kind, 10, Some(BucketCodebook::degenerate(0.0))).unwrap();
            c.seal_cluster();
            assert!(c.finalize().is_empty());
        }
        let same = CandidateStream {
            items: (0..10).map(|i| Candidate::new(i, 1.5)).collect(),
            cluster_ends: vec![10],
            sample_clusters: 1,
        };
        for kind in CollectorKind::ALL {
            let r = run_stream(kind, &same, 10, 8).unwrap();
            assert_eq!(sorted_ids(&r), (0..10).collect::<Vec<_>>());
        }
        assert!(run_stream(CollectorKind::BinaryHeap, &empty, 5, 8).unwrap().is_empty());
    }

    #[test]
    fn full_heap_ignores_worse_offer() {
        let mut b = BinaryHeapCollector::new(3);
        let mut d = DaryHeapCollector::new(3);
        for (i, x) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            b.offer(i as u32, x);
            d.offer(i as u32, x);
        }
        let (b0, d0) = (b.heap.clone().into_sorted_vec(), d.heap.clone());
        b.offer(9, 3.5);
        d.offer(9, 3.5);
        assert_eq!(b.heap.clone().into_sorted_vec(), b0);
        assert_eq!(d.heap, d0);
        assert_eq!(b.threshold(), 3.0);
        assert_eq!(d.threshold(), 3.0);
    }

    #[test]
    fn lazy_compacts_on_seal() {
        let k = 100;
        let mut lazy = LazyBufferCollector::new(k);
        let s = small_stream(3, 3 * k, 3 * k);
        for c in &s.items {
            lazy.offer(c.id, c.dist);
        }
        assert_eq!(lazy.len(), 3 * k);
        lazy.seal_cluster();
        assert_eq!(lazy.len(), k);
        let mut d: Vec<f32> = s.items.iter().map(|c| c.dist).collect();
        d.sort_by(f32::total_cmp);
        assert_eq!(lazy.threshold(), d[k - 1]);
    }

    #[test]
    fn heaps_are_unchanged_by_seal() {
        let mut h = DaryHeapCollector::new(5);
        for i in 0..20 {
            h.offer(i, (20 - i) as f32);
        }
        let before = h.heap.clone();
        h.seal_cluster();
        assert_eq!(h.heap, before);
    }

    #[test]
    fn bucket_seal_matches_update() {
        let s = small_stream(11, 4000, 500);
        let cb = build_codebook(&s.sample(), 300, 32).unwrap();
        let mut direct = ResultBuffer::new(cb.clone(), 300);
        let mut wrapped = BucketBufferCollector::new(cb, 300);
        for cluster in s.clusters() {
            for c in cluster {
                direct.push(c.id, c.dist);
                wrapped.offer(c.id, c.dist);
            }
            let t = direct.update();
            wrapped.seal_cluster();
            assert_eq!(wrapped.buffer().threshold_bucket(), t);
        }
    }

    #[test]
    fn bucket_needs_codebook() {
        assert!(AnyCollector::new(CollectorKind::BucketBuffer, 5, None).is_err());
    }

    #[test]
    fn bench_reports_median() {
        let s = small_stream(5, 5000, 500);
        let t = bench_collector(CollectorKind::LazyBuffer, &s, 100, 16, 3).unwrap();
        assert_eq!(t.samples.len(), 3);
        assert!(t.samples.contains(&t.median));
        assert!(bench_collector(CollectorKind::LazyBuffer, &s, 100, 16, 0).is_err());
    }

    #[test]
    fn stream_is_deterministic_and_nearest_first() {
        let a = small_stream(9, 10_000, 1000);
        let b = small_stream(9, 10_000, 1000);
        assert_eq!(a.items, b.items);
        assert_eq!(a.cluster_ends.len(), 10);
        let means: Vec<f32> = a
            .clusters()
            .map(|c| c.iter().map(|x| x.dist).sum::<f32>() / c.len() as f32)
            .collect();
        assert!(means.first() < means.last());
    }
}

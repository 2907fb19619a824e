use crate::metric::{Candidate, ResultSet};

use super::codebook::BucketCodebook;

/// One distance range: parallel append-only id and distance columns.
#[derive(Debug, Clone, Default)]
pub struct Bucket {
    pub ids: Vec<u32>,
    pub dists: Vec<f32>,
}

impl Bucket {
    #[inline(always)]
    fn push(&mut self, id: u32, dist: f32) {
        self.ids.push(id);
        self.dists.push(dist);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Candidate> + '_ {
        self.ids
            .iter()
            .zip(&self.dists)
            .map(|(&id, &dist)| Candidate::new(id, dist))
    }

    fn clear(&mut self) {
        self.ids.clear();
        self.dists.clear();
    }
}

const UNBOUNDED: usize = usize::MAX;

/// Bucket-based top-k collector.
///
/// Candidates are ordered across buckets but not within them. The threshold
/// bucket is the first bucket at which the cumulative count exceeds `k`;
/// pushes into later buckets are dropped. It is refreshed only by
/// [`ResultBuffer::update`], which callers invoke once per scanned cluster.
#[derive(Debug, Clone)]
pub struct ResultBuffer {
    codebook: BucketCodebook,
    buckets: Vec<Bucket>,
    tau: usize,
    k: usize,
}

impl ResultBuffer {
    pub fn new(codebook: BucketCodebook, k: usize) -> Self {
        let buckets = vec![Bucket::default(); codebook.num_buckets()];
        Self {
            codebook,
            buckets,
            tau: UNBOUNDED,
            k,
        }
    }

    pub fn codebook(&self) -> &BucketCodebook {
        &self.codebook
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.buckets
    }

    pub fn bucket(&self, b: usize) -> &Bucket {
        &self.buckets[b]
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Bucket::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(Bucket::is_empty)
    }

    pub fn occupancy(&self) -> Vec<usize> {
        self.buckets.iter().map(Bucket::len).collect()
    }

    /// Current threshold bucket, `None` while unbounded.
    pub fn threshold_bucket(&self) -> Option<usize> {
        (self.tau != UNBOUNDED).then_some(self.tau)
    }

    /// Raw threshold for hot loops: `usize::MAX` while unbounded.
    #[inline(always)]
    pub fn tau_raw(&self) -> usize {
        self.tau
    }

    /// Appends the pair if its bucket does not exceed the threshold bucket.
    #[inline(always)]
    pub fn push(&mut self, id: u32, dist: f32) -> bool {
        let b = self.codebook.assign(dist);
        self.push_to(b, id, dist)
    }

    /// Push with a precomputed bucket id.
    #[inline(always)]
    pub fn push_to(&mut self, bucket: usize, id: u32, dist: f32) -> bool {
        if bucket <= self.tau {
            self.buckets[bucket].push(id, dist);
            true
        } else {
            false
        }
    }

    /// Appends regardless of the threshold.
    #[inline(always)]
    pub fn insert(&mut self, bucket: usize, id: u32, dist: f32) {
        self.buckets[bucket].push(id, dist);
    }

    /// Recomputes the threshold bucket from the current occupancy.
    pub fn update(&mut self) -> Option<usize> {
        self.tau = threshold_over(&[self], self.k).unwrap_or(UNBOUNDED);
        self.threshold_bucket()
    }

    /// Upper boundary of the threshold bucket; infinite while unbounded or
    /// when the threshold is the last bucket.
    pub fn relaxed_threshold(&self) -> f32 {
        match self.threshold_bucket() {
            Some(t) => self.codebook.upper(t),
            None => f32::INFINITY,
        }
    }

    pub fn clear_bucket(&mut self, b: usize) {
        self.buckets[b].clear();
    }

    pub fn take_bucket(&mut self, b: usize) -> Bucket {
        std::mem::take(&mut self.buckets[b])
    }

    /// The k smallest accepted pairs by (dist, id), unordered.
    pub fn collect(&mut self) -> ResultSet {
        self.update();
        collect_union(&[self], self.k)
    }
}

/// First bucket index at which the cumulative count over all `buffers`
/// exceeds `k`, or `None` when the total is at most `k`.
pub fn threshold_over(buffers: &[&ResultBuffer], k: usize) -> Option<usize> {
    let m = buffers.first()?.buckets.len();
    let mut seen = 0usize;
    for b in 0..m {
        seen += buffers.iter().map(|buf| buf.buckets[b].len()).sum::<usize>();
        if seen > k {
            return Some(b);
        }
    }
    None
}

/// Top-k over the union of buffers sharing one codebook: every pair in
/// buckets before the joint threshold bucket plus a partial selection from it.
pub fn collect_union(buffers: &[&ResultBuffer], k: usize) -> ResultSet {
    let Some(tau) = threshold_over(buffers, k) else {
        let items = buffers
            .iter()
            .flat_map(|buf| buf.buckets.iter().flat_map(Bucket::iter))
            .collect();
        return ResultSet::new(k, items);
    };
    let mut items = Vec::with_capacity(k);
    for buf in buffers {
        for bucket in &buf.buckets[..tau] {
            items.extend(bucket.iter());
        }
    }
    let s = k - items.len();
    if s > 0 {
        let mut edge: Vec<Candidate> = buffers.iter().flat_map(|buf| buf.buckets[tau].iter()).collect();
        edge.select_nth_unstable_by(s - 1, Candidate::cmp_key);
        items.extend_from_slice(&edge[..s]);
    }
    ResultSet::new(k, items)
}

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::{codebook_from, exact_by_id, route_with_sample, QueryStats, SearchParams};
use crate::bbc::{collect_union, threshold_over, BucketCodebook, ResultBuffer};
use crate::collectors::{AnyCollector, Collector, CollectorKind};
use crate::error::{BbcError, Result};
use crate::ivf::IvfIndex;
use crate::metric::{key_unchecked, Candidate, ResultSet};
use crate::quant::{BoundedQuantizer, BqQuery};

fn bq_of(index: &IvfIndex) -> Result<&BoundedQuantizer> {
    index
        .bq()
        .ok_or_else(|| BbcError::Unsupported("index has no bounded codes".into()))
}

fn lower_bound_of(index: &IvfIndex, qs: &BqQuery, id: u32) -> f32 {
    let (c, pos) = index.location(id);
    let (code, r) = index.cluster(c).bq_code(pos);
    qs.bounds(code, r).0
}

/// Bounded-code scan into the configured collector: an object is re-ranked
/// in place whenever its lower bound does not exceed the collector's current
/// threshold.
pub fn search_ivf_bq(index: &IvfIndex, q: &[f32], p: &SearchParams) -> Result<(ResultSet, QueryStats)> {
    let qs = bq_of(index)?.query(q, index.metric())?;
    let metric = index.metric();
    let mut stats = QueryStats::default();
    let scan_start = Instant::now();
    let mut collector_time = 0.0;
    let (clusters, sample_len) = route_with_sample(index, q, p, p.k)?;
    let mut collector = if p.collector == CollectorKind::BucketBuffer {
        let mut keys = Vec::new();
        for &c in &clusters[..sample_len] {
            let list = index.cluster(c);
            keys.extend((0..list.len()).map(|i| qs.estimate(list.bq_code(i).0)));
        }
        let t = Instant::now();
        let cb = codebook_from(&keys, p.k, p.num_buckets(index)?)?;
        stats.num_buckets = cb.num_buckets();
        let col = AnyCollector::new(p.collector, p.k, Some(cb))?;
        collector_time += t.elapsed().as_secs_f64();
        col
    } else {
        AnyCollector::new(p.collector, p.k, None)?
    };
    for &c in &clusters {
        let list = index.cluster(c);
        let ids = list.ids();
        for i in 0..list.len() {
            let (code, r) = list.bq_code(i);
            let (lb, _) = qs.bounds(code, r);
            if lb <= collector.threshold() {
                let e = key_unchecked(q, list.raw(i), metric);
                stats.reranked(ids[i], p.trace);
                collector.offer(ids[i], e);
            }
        }
        stats.scanned_objects += list.len();
        let t = Instant::now();
        collector.seal_cluster();
        collector_time += t.elapsed().as_secs_f64();
    }
    stats.scan_seconds = scan_start.elapsed().as_secs_f64();
    let t = Instant::now();
    if let AnyCollector::BucketBuffer(b) = &collector {
        stats.final_tau = b.buffer().threshold_bucket();
    }
    let res = collector.finalize();
    stats.collector_seconds = collector_time + t.elapsed().as_secs_f64();
    Ok((res, stats))
}

#[derive(Debug, Clone, Copy)]
struct Bounded {
    id: u32,
    lb: f32,
    ub: f32,
    visited: bool,
}

/// Max-heap order on (ub, id).
struct ByUpper(Bounded);

impl PartialEq for ByUpper {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ByUpper {}

impl PartialOrd for ByUpper {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ByUpper {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.ub.total_cmp(&other.0.ub).then(self.0.id.cmp(&other.0.id))
    }
}

/// Min-heap order on (lb, id).
struct ByLower(Bounded);

impl PartialEq for ByLower {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ByLower {}

impl PartialOrd for ByLower {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ByLower {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.lb.total_cmp(&self.0.lb).then(other.0.id.cmp(&self.0.id))
    }
}

fn before(a: (f32, u32), b: (f32, u32)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)) == Ordering::Less
}

/// Two-heap re-ranking that always resolves the unresolved object with the
/// smallest lower bound, stopping once no lower bound undercuts the k-th
/// upper bound.
///
/// `H_u` keeps the k best objects by upper bound; `H_l` keeps everything
/// else whose interval still overlaps `H_u`'s largest upper bound.
pub struct MinRerank {
    k: usize,
    upper: BinaryHeap<ByUpper>,
    lower: BinaryHeap<ByLower>,
}

impl MinRerank {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            upper: BinaryHeap::with_capacity(k + 1),
            lower: BinaryHeap::new(),
        }
    }

    /// Largest upper bound among the current best k, infinite until full.
    pub fn threshold(&self) -> f32 {
        match self.upper.peek() {
            Some(top) if self.upper.len() >= self.k => top.0.ub,
            _ => f32::INFINITY,
        }
    }

    pub fn offer(&mut self, id: u32, lb: f32, ub: f32) {
        if self.k == 0 {
            return;
        }
        let item = Bounded {
            id,
            lb,
            ub,
            visited: false,
        };
        if self.upper.len() < self.k {
            self.upper.push(ByUpper(item));
            return;
        }
        let top = self.upper.peek().unwrap().0;
        if before((ub, id), (top.ub, top.id)) {
            let evicted = self.upper.pop().unwrap().0;
            self.upper.push(ByUpper(item));
            if evicted.lb <= self.threshold() {
                self.lower.push(ByLower(evicted));
            }
        } else if lb <= top.ub {
            self.lower.push(ByLower(item));
        }
    }

    /// Re-ranks until certified. `exact` returns an object's exact key and
    /// `on_rerank` observes each re-ranked id. Unresolved members of the
    /// result carry their upper bound as distance.
    pub fn finish<E, R>(mut self, mut exact: E, mut on_rerank: R) -> ResultSet
    where
        E: FnMut(u32) -> f32,
        R: FnMut(u32),
    {
        loop {
            let (Some(top), Some(low)) = (self.upper.peek(), self.lower.peek()) else {
                break;
            };
            let (top, low) = (top.0, low.0);
            if top.ub <= low.lb {
                break;
            }
            if !top.visited && top.lb <= low.lb {
                let mut it = self.upper.pop().unwrap().0;
                let e = exact(it.id);
                on_rerank(it.id);
                it.lb = e;
                it.ub = e;
                it.visited = true;
                self.upper.push(ByUpper(it));
                continue;
            }
            let mut it = self.lower.pop().unwrap().0;
            let e = exact(it.id);
            on_rerank(it.id);
            if before((e, it.id), (top.ub, top.id)) {
                let evicted = self.upper.pop().unwrap().0;
                it.lb = e;
                it.ub = e;
                it.visited = true;
                self.upper.push(ByUpper(it));
                if !evicted.visited {
                    self.lower.push(ByLower(evicted));
                }
            }
        }
        let items = self.upper.into_iter().map(|e| Candidate::new(e.0.id, e.0.ub)).collect();
        ResultSet::new(self.k, items)
    }
}

/// Scans every routed object's bounds into [`MinRerank`], then re-ranks.
pub fn search_ivf_bq_min(index: &IvfIndex, q: &[f32], p: &SearchParams) -> Result<(ResultSet, QueryStats)> {
    let qs = bq_of(index)?.query(q, index.metric())?;
    let mut stats = QueryStats::default();
    let scan_start = Instant::now();
    let mut heaps = MinRerank::new(p.k);
    for c in index.route(q, p.n_probe)? {
        let list = index.cluster(c);
        let ids = list.ids();
        for i in 0..list.len() {
            let (code, r) = list.bq_code(i);
            let (lb, ub) = qs.bounds(code, r);
            heaps.offer(ids[i], lb, ub);
        }
        stats.scanned_objects += list.len();
    }
    stats.scan_seconds = scan_start.elapsed().as_secs_f64();
    let t = Instant::now();
    let mut ids = Vec::new();
    let res = heaps.finish(|id| exact_by_id(index, q, id), |id| ids.push(id));
    for id in ids {
        stats.reranked(id, p.trace);
    }
    stats.rerank_seconds = t.elapsed().as_secs_f64();
    Ok((res, stats))
}

/// Bucket collector over bounded keys.
///
/// During the scan an object enters `B_u` keyed by its upper bound when that
/// bound falls before the threshold bucket, otherwise `B_l` keyed by its
/// lower bound when that bound can still reach the threshold. Afterwards
/// `B_l` is re-ranked bucket by bucket in ascending order into `B_exact`,
/// and `B_u` objects whose upper bound lies at or past the joint threshold
/// of `B_u` and `B_exact` are demoted to `B_l`, until every object that can
/// still enter the top k has been resolved.
pub struct BoundedBbc {
    k: usize,
    upper: ResultBuffer,
    lower: ResultBuffer,
}

impl BoundedBbc {
    pub fn new(codebook: BucketCodebook, k: usize) -> Self {
        Self {
            k,
            upper: ResultBuffer::new(codebook.clone(), k),
            lower: ResultBuffer::new(codebook, k),
        }
    }

    pub fn codebook(&self) -> &BucketCodebook {
        self.upper.codebook()
    }

    /// Threshold bucket of `B_u`, `None` while unbounded.
    pub fn threshold_bucket(&self) -> Option<usize> {
        self.upper.threshold_bucket()
    }

    #[inline]
    pub fn offer(&mut self, id: u32, lb: f32, ub: f32) {
        let tau = self.upper.tau_raw();
        let cb = self.upper.codebook();
        let a_ub = cb.assign(ub);
        if a_ub < tau {
            self.upper.insert(a_ub, id, ub);
        } else {
            let a_lb = cb.assign(lb);
            if a_lb <= tau {
                self.lower.insert(a_lb, id, lb);
            }
        }
    }

    /// Refreshes the threshold bucket; call once per scanned cluster.
    pub fn seal(&mut self) {
        self.upper.update();
    }

    /// Runs the re-ranking loop. `exact` returns an object's exact key,
    /// `lower_bound` its lower bound, and `on_rerank` observes re-ranked ids.
    /// Unresolved members of the result carry their upper bound.
    pub fn finish<E, L, R>(mut self, mut exact: E, mut lower_bound: L, mut on_rerank: R) -> ResultSet
    where
        E: FnMut(u32) -> f32,
        L: FnMut(u32) -> f32,
        R: FnMut(u32),
    {
        let m = self.upper.codebook().num_buckets();
        let mut resolved = ResultBuffer::new(self.upper.codebook().clone(), self.k);
        loop {
            let j = threshold_over(&[&self.upper, &resolved], self.k);
            let mut moved = false;
            if let Some(j) = j {
                for b in j..m {
                    if self.upper.bucket(b).is_empty() {
                        continue;
                    }
                    for id in self.upper.take_bucket(b).ids {
                        let lb = lower_bound(id);
                        let a = self.lower.codebook().assign(lb);
                        self.lower.insert(a, id, lb);
                    }
                    moved = true;
                }
            }
            if moved {
                continue;
            }
            let limit = match j {
                None => m,
                Some(j) => {
                    let before_j: usize = (0..j)
                        .map(|b| self.upper.bucket(b).len() + resolved.bucket(b).len())
                        .sum();
                    if before_j < self.k {
                        j + 1
                    } else {
                        j
                    }
                }
            };
            let Some(i) = (0..limit).find(|&b| !self.lower.bucket(b).is_empty()) else {
                break;
            };
            for id in self.lower.take_bucket(i).ids {
                let e = exact(id);
                on_rerank(id);
                let a = resolved.codebook().assign(e);
                resolved.insert(a, id, e);
            }
        }
        collect_union(&[&self.upper, &resolved], self.k)
    }
}

/// Bounded-code scan into [`BoundedBbc`] with a codebook sampled from the
/// upper bounds of the nearest clusters.
pub fn search_ivf_bq_bbc(index: &IvfIndex, q: &[f32], p: &SearchParams) -> Result<(ResultSet, QueryStats)> {
    let qs = bq_of(index)?.query(q, index.metric())?;
    let mut stats = QueryStats::default();
    let scan_start = Instant::now();
    let (clusters, sample_len) = route_with_sample(index, q, p, p.k)?;
    let mut sample: Vec<(f32, f32)> = Vec::new();
    for &c in &clusters[..sample_len] {
        let list = index.cluster(c);
        sample.extend((0..list.len()).map(|i| {
            let (code, r) = list.bq_code(i);
            qs.bounds(code, r)
        }));
    }
    let t = Instant::now();
    let ubs: Vec<f32> = sample.iter().map(|b| b.1).collect();
    let cb = codebook_from(&ubs, p.k, p.num_buckets(index)?)?;
    stats.num_buckets = cb.num_buckets();
    let mut col = BoundedBbc::new(cb, p.k);
    let mut collector_time = t.elapsed().as_secs_f64();
    let mut offset = 0;
    for (ci, &c) in clusters.iter().enumerate() {
        let list = index.cluster(c);
        let ids = list.ids();
        if ci < sample_len {
            for (i, &(lb, ub)) in sample[offset..offset + list.len()].iter().enumerate() {
                col.offer(ids[i], lb, ub);
            }
            offset += list.len();
        } else {
            for i in 0..list.len() {
                let (code, r) = list.bq_code(i);
                let (lb, ub) = qs.bounds(code, r);
                col.offer(ids[i], lb, ub);
            }
        }
        stats.scanned_objects += list.len();
        let t = Instant::now();
        col.seal();
        collector_time += t.elapsed().as_secs_f64();
    }
    stats.collector_seconds = collector_time;
    stats.final_tau = col.threshold_bucket();
    stats.scan_seconds = scan_start.elapsed().as_secs_f64();
    let t = Instant::now();
    let mut ids = Vec::new();
    let res = col.finish(
        |id| exact_by_id(index, q, id),
        |id| lower_bound_of(index, &qs, id),
        |id| ids.push(id),
    );
    for id in ids {
        stats.reranked(id, p.trace);
    }
    stats.rerank_seconds = t.elapsed().as_secs_f64();
    Ok((res, stats))
}

use std::time::Instant;

use super::{codebook_from, exact_by_id, route_with_sample, scan_collect, top_k, QueryStats, SearchParams};
use crate::bbc::ResultBuffer;
use crate::error::{BbcError, Result};
use crate::ivf::IvfIndex;
use crate::metric::{key_unchecked, Candidate, ResultSet};
use crate::quant::PqCodebook;

/// Marks buffer entries whose exact distance was computed during the scan;
/// the low bits then index the early re-rank list.
const EXACT_FLAG: u32 = 1 << 31;

fn pq_of(index: &IvfIndex) -> Result<&PqCodebook> {
    index
        .pq()
        .ok_or_else(|| BbcError::Unsupported("index has no PQ codes".into()))
}

/// Collects the `n_cand` smallest ADC estimates with the configured collector
/// and re-ranks all of them by random access.
pub fn search_ivf_pq(index: &IvfIndex, q: &[f32], p: &SearchParams) -> Result<(ResultSet, QueryStats)> {
    let lut = pq_of(index)?.lut(q, index.metric())?;
    let mut stats = QueryStats::default();
    let pool = scan_collect(index, q, p, p.collector, p.n_cand, &mut stats, |list, i| {
        lut.adc(list.pq_code(i))
    })?;
    stats.pool_short = stats.scanned_objects < p.n_cand;
    let t = Instant::now();
    let mut exact = Vec::with_capacity(pool.len());
    for c in &pool.items {
        stats.reranked(c.id, p.trace);
        exact.push(Candidate::new(c.id, exact_by_id(index, q, c.id)));
    }
    let res = top_k(exact, p.k);
    stats.rerank_seconds = t.elapsed().as_secs_f64();
    Ok((res, stats))
}

/// Bucket holding the `p`-th smallest entry of `hist`; `hist.len()` when the
/// histogram holds fewer than `p` entries.
fn predicted_bucket(hist: &[usize], p: usize) -> usize {
    if p == 0 {
        return 0;
    }
    let mut seen = 0;
    for (b, &count) in hist.iter().enumerate() {
        seen += count;
        if seen >= p {
            return b;
        }
    }
    hist.len()
}

fn pool_share(part: usize, total: usize, n_cand: usize) -> usize {
    if total == 0 {
        0
    } else {
        (part as u128 * n_cand as u128).div_ceil(total as u128) as usize
    }
}

/// ADC scan into a bucket buffer with early re-ranking: objects accepted
/// below the predicted threshold bucket get their exact distance while the
/// adjacent raw vector is at hand; the rest are re-ranked after collection.
/// Pool membership is decided by the ADC estimate for every object, so the
/// pool is the same one [`search_ivf_pq`] re-ranks.
pub fn search_ivf_pq_bbc(index: &IvfIndex, q: &[f32], p: &SearchParams) -> Result<(ResultSet, QueryStats)> {
    if index.len() > EXACT_FLAG as usize {
        return Err(BbcError::Unsupported("early re-ranking needs ids below 2^31".into()));
    }
    let lut = pq_of(index)?.lut(q, index.metric())?;
    let metric = index.metric();
    let n_cand = p.n_cand;
    let mut stats = QueryStats::default();
    let scan_start = Instant::now();
    let (clusters, sample_len) = route_with_sample(index, q, p, n_cand)?;
    let total: usize = clusters.iter().map(|&c| index.cluster(c).len()).sum();

    let mut sample_keys = Vec::new();
    for &c in &clusters[..sample_len] {
        let list = index.cluster(c);
        sample_keys.extend((0..list.len()).map(|i| lut.adc(list.pq_code(i))));
    }
    let t = Instant::now();
    let cb = codebook_from(&sample_keys, n_cand, p.num_buckets(index)?)?;
    let m = cb.num_buckets();
    stats.num_buckets = m;
    let mut sample_buckets = vec![0u8; sample_keys.len()];
    cb.assign_batch(&sample_keys, &mut sample_buckets);
    let mut hist = vec![0usize; m];
    for &b in &sample_buckets {
        hist[b as usize] += 1;
    }
    let mut tau_pred = predicted_bucket(&hist, pool_share(sample_keys.len(), total, n_cand));
    let mut buf = ResultBuffer::new(cb, n_cand);
    let mut collector_time = t.elapsed().as_secs_f64();

    let mut early: Vec<(u32, f32)> = Vec::new();
    let mut offset = 0;
    let mut scanned = 0;
    for (ci, &c) in clusters.iter().enumerate() {
        let list = index.cluster(c);
        let ids = list.ids();
        let in_sample = ci < sample_len;
        for i in 0..list.len() {
            let (key, a) = if in_sample {
                (sample_keys[offset + i], sample_buckets[offset + i] as usize)
            } else {
                let key = lut.adc(list.pq_code(i));
                let a = buf.codebook().assign(key);
                hist[a] += 1;
                (key, a)
            };
            if a > buf.tau_raw() {
                continue;
            }
            if a < tau_pred {
                let e = key_unchecked(q, list.raw(i), metric);
                stats.reranked(ids[i], p.trace);
                buf.push_to(a, early.len() as u32 | EXACT_FLAG, key);
                early.push((ids[i], e));
            } else {
                buf.push_to(a, ids[i], key);
            }
        }
        if in_sample {
            offset += list.len();
        }
        scanned += list.len();
        let t = Instant::now();
        buf.update();
        if ci + 1 >= sample_len {
            tau_pred = predicted_bucket(&hist, pool_share(scanned, total, n_cand));
        }
        collector_time += t.elapsed().as_secs_f64();
    }
    stats.scanned_objects = scanned;
    stats.pool_short = scanned < n_cand;
    let t = Instant::now();
    let pool = buf.collect();
    stats.final_tau = buf.threshold_bucket();
    collector_time += t.elapsed().as_secs_f64();
    stats.collector_seconds = collector_time;
    stats.scan_seconds = scan_start.elapsed().as_secs_f64() - t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut exact = Vec::with_capacity(pool.len());
    for c in pool.items {
        if c.id & EXACT_FLAG != 0 {
            let (id, e) = early[(c.id & !EXACT_FLAG) as usize];
            exact.push(Candidate::new(id, e));
        } else {
            stats.reranked(c.id, p.trace);
            exact.push(Candidate::new(c.id, exact_by_id(index, q, c.id)));
        }
    }
    let res = top_k(exact, p.k);
    stats.rerank_seconds = t.elapsed().as_secs_f64();
    Ok((res, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_bucket_cases() {
        let hist = [2, 0, 3, 1];
        assert_eq!(predicted_bucket(&hist, 0), 0);
        assert_eq!(predicted_bucket(&hist, 1), 0);
        assert_eq!(predicted_bucket(&hist, 2), 0);
        assert_eq!(predicted_bucket(&hist, 3), 2);
        assert_eq!(predicted_bucket(&hist, 6), 3);
        assert_eq!(predicted_bucket(&hist, 7), 4);
    }

    #[test]
    fn pool_share_rounds_up() {
        assert_eq!(pool_share(1, 3, 10), 4);
        assert_eq!(pool_share(3, 3, 10), 10);
        assert_eq!(pool_share(0, 0, 10), 0);
    }
}

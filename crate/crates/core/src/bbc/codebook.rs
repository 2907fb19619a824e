use crate::error::{invalid, BbcError, Result};

/// Equal-width resolution of the distance range; one byte per map entry.
pub const N_EW: usize = 256;

pub const DEFAULT_L1_BYTES: usize = 32 * 1024;

/// Bucket count that keeps the tails of every bucket plus the quantizer's
/// working set (two code batches and the lookup table) resident in L1.
///
/// Each bucket reserves two buffers (ids, distances) times two prefetched
/// 64-byte lines: 256 bytes. `n_sub` is the number of sub-quantizers.
pub fn select_num_buckets(l1_bytes: usize, n_sub: usize, bits: u32) -> Result<usize> {
    let code_bytes = 2 * 32 * n_sub * bits as usize / 8;
    let lut_bytes = n_sub << bits;
    let free = l1_bytes as i64 - code_bytes as i64 - lut_bytes as i64;
    if free <= 0 {
        return invalid(format!(
            "L1 budget {l1_bytes} B cannot hold codes ({code_bytes} B) and lookup table ({lut_bytes} B)"
        ));
    }
    let m = free as usize / 256;
    if m < 2 {
        return invalid(format!("L1 budget {l1_bytes} B leaves room for fewer than two buckets"));
    }
    Ok(m.min(N_EW))
}

/// One-dimensional equal-depth quantizer over query distances.
///
/// Distances are first mapped to one of [`N_EW`] equal-width cells over
/// `[d_min, d_max]` and then through `map` to one of `m` buckets. The map is
/// non-decreasing, so bucket assignment is monotone in the distance.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketCodebook {
    d_min: f32,
    d_max: f32,
    delta: f32,
    inv_delta: f32,
    map: [u8; N_EW],
    m: usize,
    boundaries: Vec<f32>,
}

impl BucketCodebook {
    /// Builds a codebook from explicit bucket boundaries `c_1 < ... < c_{m+1}`,
    /// which must each fall on the equal-width grid between the first and last.
    pub fn from_boundaries(boundaries: &[f32]) -> Result<Self> {
        let m = boundaries.len().saturating_sub(1);
        if !(1..=N_EW).contains(&m) {
            return invalid("need between 2 and 257 boundaries");
        }
        if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("boundaries must be strictly increasing");
        }
        let (d_min, d_max) = (boundaries[0], boundaries[m]);
        let delta = (d_max - d_min) / N_EW as f32;
        let inv_delta = 1.0 / delta;
        let mut map = [0u8; N_EW];
        for (cell, slot) in map.iter_mut().enumerate() {
            let lo = d_min + cell as f32 * delta;
            let b = boundaries[1..m].iter().filter(|&&c| c <= lo + delta * 1e-3).count();
            *slot = b as u8;
        }
        Ok(Self {
            d_min,
            d_max,
            delta,
            inv_delta,
            map,
            m,
            boundaries: boundaries.to_vec(),
        })
    }

    /// Single bucket holding every distance.
    pub fn degenerate(value: f32) -> Self {
        Self {
            d_min: value,
            d_max: value,
            delta: 0.0,
            inv_delta: 0.0,
            map: [0; N_EW],
            m: 1,
            boundaries: vec![value, value],
        }
    }

    pub fn num_buckets(&self) -> usize {
        self.m
    }

    pub fn d_min(&self) -> f32 {
        self.d_min
    }

    pub fn d_max(&self) -> f32 {
        self.d_max
    }

    pub fn delta(&self) -> f32 {
        self.delta
    }

    pub fn map(&self) -> &[u8; N_EW] {
        &self.map
    }

    /// `c_1 ..= c_{m+1}`.
    pub fn boundaries(&self) -> &[f32] {
        &self.boundaries
    }

    pub fn is_degenerate(&self) -> bool {
        self.delta == 0.0
    }

    #[inline(always)]
    pub fn cell(&self, dist: f32) -> usize {
        let raw = ((dist - self.d_min) * self.inv_delta) as i32;
        raw.clamp(0, N_EW as i32 - 1) as usize
    }

    /// Bucket id of `dist`. Values below `d_min` land in bucket 0 and values
    /// at or beyond `d_max` in bucket `m - 1`. NaN lands in bucket 0; use
    /// [`BucketCodebook::try_assign`] when the input is untrusted.
    #[inline(always)]
    pub fn assign(&self, dist: f32) -> usize {
        self.map[self.cell(dist)] as usize
    }

    pub fn try_assign(&self, dist: f32) -> Result<usize> {
        if dist.is_nan() {
            return Err(BbcError::NanDistance);
        }
        Ok(self.assign(dist))
    }

    pub fn assign_batch(&self, dists: &[f32], out: &mut [u8]) {
        for (o, &d) in out.iter_mut().zip(dists) {
            *o = self.map[self.cell(d)];
        }
    }

    /// Upper boundary of `bucket`; infinite for the last bucket because
    /// distances beyond `d_max` are clamped into it.
    pub fn upper(&self, bucket: usize) -> f32 {
        if bucket + 1 >= self.m {
            f32::INFINITY
        } else {
            self.boundaries[bucket + 1]
        }
    }
}

/// Equal-depth codebook over the `k` smallest of `sampled`.
///
/// 256 equal-width cells over the local top-k range are merged greedily
/// into `m` contiguous groups of near-equal population. Every group keeps at
/// least one cell so the boundaries stay strictly increasing. When fewer than
/// `k` samples exist the whole sample is used. A sample whose top-k
/// distances are all equal yields a single-bucket codebook.
pub fn build_codebook(sampled: &[f32], k: usize, m: usize) -> Result<BucketCodebook> {
    if sampled.is_empty() || k == 0 {
        return invalid("codebook needs a non-empty sample and k > 0");
    }
    if !(2..=N_EW).contains(&m) {
        return invalid(format!("bucket count {m} must be in 2..={N_EW}"));
    }
    if sampled.iter().any(|x| x.is_nan()) {
        return Err(BbcError::NanDistance);
    }
    let k = k.min(sampled.len());
    let mut top = sampled.to_vec();
    top.select_nth_unstable_by(k - 1, f32::total_cmp);
    top.truncate(k);
    let d_max = top[k - 1];
    let d_min = top.iter().copied().fold(f32::INFINITY, f32::min);
    let delta = (d_max - d_min) / N_EW as f32;
    if !(delta > 0.0) || !delta.is_finite() {
        return Ok(BucketCodebook::degenerate(d_min));
    }
    let inv_delta = 1.0 / delta;

    let mut counts = [0usize; N_EW];
    for &x in &top {
        let c = (((x - d_min) * inv_delta) as i32).clamp(0, N_EW as i32 - 1);
        counts[c as usize] += 1;
    }

    let mut map = [0u8; N_EW];
    let mut before = 0usize;
    let mut group = 0usize;
    for (cell, &count) in counts.iter().enumerate() {
        if cell > 0 {
            let target = before * m / k;
            // advance at most one group per cell, but never fall so far
            // behind that the remaining cells cannot cover the remaining groups
            let floor = (cell + m).saturating_sub(N_EW);
            group = target.clamp(group, group + 1).max(floor).min(m - 1);
        }
        map[cell] = group as u8;
        before += count;
    }

    let mut boundaries = Vec::with_capacity(m + 1);
    boundaries.push(d_min);
    for cell in 1..N_EW {
        if map[cell] != map[cell - 1] {
            boundaries.push(d_min + cell as f32 * delta);
        }
    }
    boundaries.push(d_max);
    debug_assert_eq!(boundaries.len(), m + 1);

    Ok(BucketCodebook {
        d_min,
        d_max,
        delta,
        inv_delta,
        map,
        m,
        boundaries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeReport {
    /// Mean |distance - upper boundary of its bucket| over the top-k items.
    pub mae: f64,
    pub mean_topk: f64,
    pub delta: f64,
}

impl MaeReport {
    pub fn relative(&self) -> f64 {
        self.mae / self.mean_topk
    }
}

/// Quantization error of an equal-depth codebook built on the top-k region of
/// `dists`, measured against each item's bucket upper boundary.
pub fn theorem1_empirical_mae(dists: &[f32], k: usize, m: usize) -> Result<MaeReport> {
    let cb = build_codebook(dists, k, m)?;
    let k = k.min(dists.len());
    let mut top = dists.to_vec();
    top.select_nth_unstable_by(k - 1, f32::total_cmp);
    top.truncate(k);
    let last = cb.boundaries[cb.m];
    let err: f64 = top
        .iter()
        .map(|&x| {
            let b = cb.assign(x);
            let upper = if b + 1 >= cb.m { last } else { cb.boundaries[b + 1] };
            (upper as f64 - x as f64).abs()
        })
        .sum();
    let mean_topk = top.iter().map(|&x| x as f64).sum::<f64>() / k as f64;
    Ok(MaeReport {
        mae: err / k as f64,
        mean_topk,
        delta: cb.delta as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{ChiSquared, Distribution, Exp};

    #[test]
    fn bucket_count_rule() {
        assert_eq!(select_num_buckets(32768, 256, 4).unwrap(), 80);
        assert_eq!(select_num_buckets(32768, 384, 4).unwrap(), 56);
        assert_eq!(select_num_buckets(32768, 192, 4).unwrap(), 92);
        assert_eq!(select_num_buckets(32768, 24, 4).unwrap(), 123);
        assert!(select_num_buckets(4096, 256, 4).is_err());
        assert!(select_num_buckets(12288 + 300, 256, 4).is_err());
    }

    #[test]
    fn map_is_monotone_and_covers_all_buckets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f32> = (0..10_000).map(|_| rng.random::<f32>().powi(3)).collect();
        for m in [2, 7, 80, 122, 256] {
            let cb = build_codebook(&xs, 5000, m).unwrap();
            assert_eq!(cb.num_buckets(), m);
            assert!(cb.map().windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(cb.map()[0], 0);
            assert_eq!(cb.map()[N_EW - 1] as usize, m - 1);
            assert!(cb.boundaries().windows(2).all(|w| w[0] < w[1]));
            assert_eq!(cb.boundaries().len(), m + 1);
        }
    }

    #[test]
    fn uniform_sample_gives_near_equal_width() {
        let n = 100_000;
        let xs: Vec<f32> = (0..n).map(|i| (i as f32 + 0.5) / n as f32).collect();
        let m = 64;
        let cb = build_codebook(&xs, n, m).unwrap();
        let width = (cb.d_max() - cb.d_min()) / m as f32;
        for (i, &c) in cb.boundaries().iter().enumerate() {
            let ew = cb.d_min() + i as f32 * width;
            assert!((c - ew).abs() <= cb.delta() * 1.001, "boundary {i}: {c} vs {ew}");
        }
    }

    #[test]
    fn skewed_sample_populations_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exp = Exp::new(1.0f32).unwrap();
        let xs: Vec<f32> = (0..50_000).map(|_| exp.sample(&mut rng)).collect();
        let (k, m) = (20_000, 80);
        let cb = build_codebook(&xs, k, m).unwrap();
        let mut top = xs.clone();
        top.sort_by(f32::total_cmp);
        top.truncate(k);
        // histogram oracle, independent of the greedy merge
        let mut cells = [0usize; N_EW];
        for &x in &top {
            cells[cb.cell(x)] += 1;
        }
        let max_cell = *cells.iter().max().unwrap() as f64;
        let mut pops = vec![0usize; m];
        for &x in &top {
            pops[cb.assign(x)] += 1;
        }
        let ideal = k as f64 / m as f64;
        for (b, &p) in pops.iter().enumerate() {
            assert!((p as f64 - ideal).abs() <= 1.0 + max_cell, "bucket {b}: {p} vs {ideal}");
        }
    }

    /// Sum over the sample of |upper boundary of its bucket - distance|.
    fn cost(boundaries: &[f32], assign: impl Fn(f32) -> usize, xs: &[f32]) -> f64 {
        xs.iter()
            .map(|&x| (boundaries[assign(x) + 1] as f64 - x as f64).abs())
            .sum()
    }

    #[test]
    fn equal_depth_beats_equal_width_on_skewed_data() {
        // Lower tail of a concentrated distance distribution: density rises
        // steeply toward the k-th distance, as in a real top-k region.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chi = ChiSquared::new(128.0f32).unwrap();
        let xs: Vec<f32> = (0..200_000).map(|_| chi.sample(&mut rng).sqrt()).collect();
        let (k, m) = (5_000, 40);
        let ed = build_codebook(&xs, k, m).unwrap();
        let mut top = xs.clone();
        top.sort_by(f32::total_cmp);
        top.truncate(k);
        let (lo, hi) = (top[0], top[k - 1]);
        let w = (hi - lo) / m as f32;
        let ew: Vec<f32> = (0..=m).map(|i| lo + i as f32 * w).collect();
        let ew_assign = |x: f32| (((x - lo) / w) as usize).min(m - 1);
        let ed_bounds = ed.boundaries().to_vec();
        let c_ed = cost(&ed_bounds, |x| ed.assign(x), &top);
        let c_ew = cost(&ew, ew_assign, &top);
        assert!(c_ed <= c_ew, "equal-depth {c_ed} vs equal-width {c_ew}");
    }

    #[test]
    fn assignment_edges() {
        let xs: Vec<f32> = (0..1000).map(|i| 1.0 + i as f32 / 100.0).collect();
        let cb = build_codebook(&xs, 1000, 10).unwrap();
        assert_eq!(cb.assign(cb.d_min()), 0);
        assert_eq!(cb.assign(0.0), 0);
        assert_eq!(cb.assign(cb.d_max()), 9);
        assert_eq!(cb.assign(1e9), 9);
        assert_eq!(cb.upper(9), f32::INFINITY);
        assert!(cb.try_assign(f32::NAN).is_err());
        let mut out = vec![0u8; xs.len()];
        cb.assign_batch(&xs, &mut out);
        assert!(xs.iter().zip(&out).all(|(&x, &b)| cb.assign(x) == b as usize));
    }

    #[test]
    fn explicit_boundaries() {
        let cb = BucketCodebook::from_boundaries(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(cb.num_buckets(), 8);
        assert_eq!(cb.assign(4.9), 4);
        assert_eq!(cb.assign(5.0), 5);
        assert_eq!(cb.assign(0.5), 0);
        assert_eq!(cb.upper(5), 6.0);
        assert!(BucketCodebook::from_boundaries(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn degenerate_sample() {
        let cb = build_codebook(&[2.5; 100], 50, 10).unwrap();
        assert!(cb.is_degenerate());
        assert_eq!(cb.num_buckets(), 1);
        assert_eq!(cb.assign(2.5), 0);
        assert_eq!(cb.assign(100.0), 0);
        assert!(build_codebook(&[1.0, f32::NAN], 2, 2).is_err());
        assert!(build_codebook(&[1.0, 2.0], 2, 1).is_err());
    }

    #[test]
    fn small_sample_uses_everything() {
        let xs: Vec<f32> = (0..100).map(|i| i as f32).collect();
        let cb = build_codebook(&xs, 1000, 8).unwrap();
        assert_eq!(cb.d_max(), 99.0);
    }

    #[test]
    fn mae_at_full_resolution_is_within_one_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f32> = (0..50_000).map(|_| 10.0 + rng.random::<f32>()).collect();
        let r = theorem1_empirical_mae(&xs, 20_000, N_EW).unwrap();
        assert!(r.mae <= r.delta, "{} > {}", r.mae, r.delta);
    }
}

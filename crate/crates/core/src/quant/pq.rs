use crate::error::{invalid, BbcError, Result};
use crate::kmeans::{train_kmeans, KMeansParams};
use crate::metric::{dot, l2_sqr, Metric};

pub const DEFAULT_SUB_DIM: usize = 4;
pub const DEFAULT_BITS: u32 = 4;

/// Product quantizer: `n_sub` independent codebooks of `2^bits` centroids,
/// one per contiguous block of `sub_dim` dimensions. Codes use one byte per
/// sub-quantizer.
#[derive(Debug, Clone)]
pub struct PqCodebook {
    d: usize,
    n_sub: usize,
    sub_dim: usize,
    bits: u32,
    /// n_sub x ksub x sub_dim, row-major.
    centroids: Vec<f32>,
    /// Per sub-quantizer training WCSS after each k-means round.
    pub wcss_history: Vec<Vec<f64>>,
}

/// Equality ignores the training history.
impl PartialEq for PqCodebook {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d
            && self.sub_dim == other.sub_dim
            && self.bits == other.bits
            && self.centroids == other.centroids
    }
}

impl PqCodebook {
    pub fn from_centroids(d: usize, sub_dim: usize, bits: u32, centroids: Vec<f32>) -> Result<Self> {
        check_shape(d, sub_dim, bits)?;
        let n_sub = d / sub_dim;
        if centroids.len() != n_sub * (1usize << bits) * sub_dim {
            return invalid("centroid table has the wrong size");
        }
        Ok(Self {
            d,
            n_sub,
            sub_dim,
            bits,
            centroids,
            wcss_history: Vec::new(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn ksub(&self) -> usize {
        1 << self.bits
    }

    /// Bytes per encoded vector.
    pub fn code_len(&self) -> usize {
        self.n_sub
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, s: usize, c: usize) -> &[f32] {
        let off = (s * self.ksub() + c) * self.sub_dim;
        &self.centroids[off..off + self.sub_dim]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.d {
            return Err(BbcError::DimensionMismatch {
                expected: self.d,
                actual: len,
            });
        }
        Ok(())
    }

    pub fn encode(&self, v: &[f32]) -> Result<Vec<u8>> {
        self.check_dim(v.len())?;
        let mut out = vec![0u8; self.n_sub];
        self.encode_into(v, &mut out);
        Ok(out)
    }

    /// Nearest centroid per sub-vector; ties go to the smaller index.
    pub fn encode_into(&self, v: &[f32], out: &mut [u8]) {
        let ksub = self.ksub();
        for (s, (sub, slot)) in v.chunks_exact(self.sub_dim).zip(out.iter_mut()).enumerate() {
            let table = &self.centroids[s * ksub * self.sub_dim..(s + 1) * ksub * self.sub_dim];
            let mut best = (0usize, f32::INFINITY);
            for (c, cent) in table.chunks_exact(self.sub_dim).enumerate() {
                let dist = l2_sqr(sub, cent);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            *slot = best.0 as u8;
        }
    }

    pub fn decode(&self, code: &[u8]) -> Result<Vec<f32>> {
        if code.len() != self.n_sub {
            return Err(BbcError::DimensionMismatch {
                expected: self.n_sub,
                actual: code.len(),
            });
        }
        let mut out = Vec::with_capacity(self.d);
        for (s, &c) in code.iter().enumerate() {
            if c as usize >= self.ksub() {
                return invalid(format!("sub-code {c} out of range"));
            }
            out.extend_from_slice(self.centroid(s, c as usize));
        }
        Ok(out)
    }

    /// Per-query table of partial distances. Euclidean entries are squared
    /// partial L2 distances; inner-product and cosine entries are negated
    /// partial dot products.
    pub fn lut(&self, q: &[f32], metric: Metric) -> Result<LookupTable> {
        self.check_dim(q.len())?;
        let ksub = self.ksub();
        let mut table = Vec::with_capacity(self.n_sub * ksub);
        for (s, sub) in q.chunks_exact(self.sub_dim).enumerate() {
            for c in 0..ksub {
                let cent = self.centroid(s, c);
                table.push(match metric {
                    Metric::Euclidean => l2_sqr(sub, cent),
                    Metric::InnerProduct | Metric::Cosine => -dot(sub, cent),
                });
            }
        }
        Ok(LookupTable {
            n_sub: self.n_sub,
            ksub,
            table,
            metric,
        })
    }
}

fn check_shape(d: usize, sub_dim: usize, bits: u32) -> Result<()> {
    if sub_dim == 0 || d == 0 || d % sub_dim != 0 {
        return invalid(format!("d={d} is not divisible by sub_dim={sub_dim}"));
    }
    if !(1..=8).contains(&bits) {
        return invalid(format!("bits={bits} must be in 1..=8"));
    }
    Ok(())
}

/// Trains one k-means codebook per sub-space on the rows of `sample`.
pub fn pq_train(sample: &[f32], d: usize, sub_dim: usize, bits: u32, seed: u64) -> Result<PqCodebook> {
    check_shape(d, sub_dim, bits)?;
    if sample.len() % d != 0 {
        return invalid("sample length is not a multiple of d");
    }
    let n = sample.len() / d;
    let ksub = 1usize << bits;
    if n < ksub {
        return invalid(format!("PQ training needs at least {ksub} vectors, got {n}"));
    }
    let n_sub = d / sub_dim;
    let mut centroids = Vec::with_capacity(n_sub * ksub * sub_dim);
    let mut history = Vec::with_capacity(n_sub);
    for s in 0..n_sub {
        let block: Vec<f32> = sample
            .chunks_exact(d)
            .flat_map(|row| row[s * sub_dim..(s + 1) * sub_dim].iter().copied())
            .collect();
        let mut params = KMeansParams::new(ksub, seed.wrapping_add(s as u64));
        params.max_points_per_centroid = 256;
        let km = train_kmeans(&block, sub_dim, &params)?;
        centroids.extend_from_slice(&km.centroids);
        history.push(km.wcss_history);
    }
    let mut cb = PqCodebook::from_centroids(d, sub_dim, bits, centroids)?;
    cb.wcss_history = history;
    Ok(cb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    n_sub: usize,
    ksub: usize,
    table: Vec<f32>,
    metric: Metric,
}

impl LookupTable {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn entry(&self, s: usize, c: usize) -> f32 {
        self.table[s * self.ksub + c]
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Estimated comparison key for one code. Euclidean sums are square
    /// rooted so estimates share units with exact distances.
    #[inline]
    pub fn adc(&self, code: &[u8]) -> f32 {
        debug_assert_eq!(code.len(), self.n_sub);
        let mut acc = [0.0f32; 4];
        let mut chunks = code.chunks_exact(4);
        let mut s = 0;
        for c in &mut chunks {
            for lane in 0..4 {
                acc[lane] += self.table[(s + lane) * self.ksub + c[lane] as usize];
            }
            s += 4;
        }
        let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for &c in chunks.remainder() {
            sum += self.table[s * self.ksub + c as usize];
            s += 1;
        }
        match self.metric {
            Metric::Euclidean => sum.max(0.0).sqrt(),
            Metric::InnerProduct | Metric::Cosine => sum,
        }
    }

    /// Estimates for consecutive codes of `code_len` bytes each.
    pub fn adc_batch(&self, codes: &[u8], out: &mut [f32]) {
        for (code, slot) in codes.chunks_exact(self.n_sub).zip(out.iter_mut()) {
            *slot = self.adc(code);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, Distribution};
    use crate::metric::distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained(d: usize, seed: u64) -> (PqCodebook, Vec<f32>) {
        let ds = synth_dataset(2000, d, Distribution::Gaussian, seed).unwrap();
        (pq_train(&ds.data, d, 4, 4, seed).unwrap(), ds.data)
    }

    #[test]
    fn shape_checks() {
        assert!(pq_train(&[0.0; 60], 6, 4, 4, 0).is_err());
        assert!(pq_train(&[0.0; 40], 8, 4, 4, 0).is_err());
        let (cb, _) = trained(16, 1);
        assert_eq!(cb.ksub(), 16);
        assert_eq!(cb.centroids().len(), 4 * 16 * 4);
        assert!(cb.encode(&[0.0; 15]).is_err());
        assert!(cb.lut(&[0.0; 17], Metric::Euclidean).is_err());
    }

    #[test]
    fn distinct_points_are_reproduced() {
        let data: Vec<f32> = (0..16)
            .flat_map(|i| [i as f32, -(i as f32), 0.5 * i as f32, 3.0])
            .collect();
        let cb = pq_train(&data, 4, 4, 4, 2).unwrap();
        for row in data.chunks_exact(4) {
            let code = cb.encode(row).unwrap();
            assert_eq!(cb.decode(&code).unwrap(), row);
        }
    }

    #[test]
    fn training_error_never_increases() {
        let (cb, _) = trained(16, 3);
        for h in &cb.wcss_history {
            for w in h.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn encode_matches_exhaustive_scan() {
        let (cb, _) = trained(32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let v: Vec<f32> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
            let code = cb.encode(&v).unwrap();
            for s in 0..cb.n_sub() {
                let sub = &v[s * 4..(s + 1) * 4];
                let dists: Vec<f32> = (0..16).map(|c| l2_sqr(sub, cb.centroid(s, c))).collect();
                let min = dists.iter().copied().fold(f32::INFINITY, f32::min);
                let first = dists.iter().position(|&x| x == min).unwrap();
                assert_eq!(code[s] as usize, first);
            }
        }
    }

    #[test]
    fn encode_is_idempotent_and_concatenation_is_exact() {
        let (cb, data) = trained(16, 6);
        let code = cb.encode(&data[..16]).unwrap();
        assert_eq!(cb.encode(&cb.decode(&code).unwrap()).unwrap(), code);
        let wanted = [3u8, 0, 15, 7];
        let v = cb.decode(&wanted).unwrap();
        assert_eq!(cb.encode(&v).unwrap(), wanted);
        let lut = cb.lut(&v, Metric::Euclidean).unwrap();
        assert_eq!(lut.adc(&wanted), 0.0);
        assert_eq!(lut.len(), cb.n_sub() * 16);
    }

    #[test]
    fn adc_equals_decoded_distance() {
        let (cb, _) = trained(64, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for metric in [Metric::Euclidean, Metric::InnerProduct] {
            for _ in 0..200 {
                let q: Vec<f32> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
                let code: Vec<u8> = (0..16).map(|_| rng.random_range(0..16)).collect();
                let lut = cb.lut(&q, metric).unwrap();
                let want = distance(&q, &cb.decode(&code).unwrap(), metric).unwrap();
                let got = lut.adc(&code);
                assert!((got - want).abs() <= 1e-4 * want.abs().max(1.0), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn zero_table_and_batch() {
        let (cb, data) = trained(16, 9);
        let zero = LookupTable {
            n_sub: 4,
            ksub: 16,
            table: vec![0.0; 64],
            metric: Metric::Euclidean,
        };
        assert_eq!(zero.adc(&[1, 2, 3, 4]), 0.0);
        let codes: Vec<u8> = data
            .chunks_exact(16)
            .take(32)
            .flat_map(|v| cb.encode(v).unwrap())
            .collect();
        let lut = cb.lut(&data[16 * 40..16 * 41], Metric::Euclidean).unwrap();
        let mut out = [0.0f32; 32];
        lut.adc_batch(&codes, &mut out);
        for (i, code) in codes.chunks_exact(4).enumerate() {
            assert_eq!(out[i], lut.adc(code));
        }
    }
}

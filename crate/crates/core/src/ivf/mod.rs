//! Inverted-file index: k-means partition plus per-cluster posting lists
//! whose records keep each object's codes next to its raw vector.

mod io;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{invalid, BbcError, Result};
use crate::kmeans::{nearest_centroids, train_kmeans, KMeansParams};
use crate::metric::{dot, l2_sqr, normalize, Metric};
use crate::quant::{pq_train, BoundedQuantizer, PqCodebook};

pub use io::{FORMAT_VERSION, MAGIC};

/// Default cluster count: the power of two nearest to sqrt(n).
pub fn default_n_cluster(n: usize) -> usize {
    if n <= 1 {
        return 1;
    }
    let exp = (0.5 * (n as f64).log2()).round() as u32;
    (1usize << exp).min(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IvfParams {
    /// `None` selects [`default_n_cluster`].
    pub n_cluster: Option<usize>,
    pub iterations: usize,
    pub seed: u64,
    pub max_points_per_centroid: usize,
}

impl Default for IvfParams {
    fn default() -> Self {
        Self {
            n_cluster: None,
            iterations: 25,
            seed: 42,
            max_points_per_centroid: 64,
        }
    }
}

/// Word offsets of the sections inside one fixed-stride record:
/// `[pq code | bq radius, bq code | raw vector]`, each section 4-byte aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecordLayout {
    pub pq_len: usize,
    pub bq_len: usize,
    pub d: usize,
}

impl RecordLayout {
    pub fn pq_words(&self) -> usize {
        self.pq_len.div_ceil(4)
    }

    pub fn bq_words(&self) -> usize {
        if self.bq_len == 0 {
            0
        } else {
            1 + self.bq_len.div_ceil(4)
        }
    }

    pub fn code_words(&self) -> usize {
        self.pq_words() + self.bq_words()
    }

    pub fn stride(&self) -> usize {
        self.code_words() + self.d
    }
}

/// Posting list of one cluster. Record `i` holds the codes and raw vector of
/// `ids[i]` contiguously.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PostingList {
    ids: Vec<u32>,
    records: Vec<u32>,
    layout: RecordLayout,
}

impl PostingList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn layout(&self) -> RecordLayout {
        self.layout
    }

    /// All records back to back, `len() * stride` words.
    pub fn records(&self) -> &[u32] {
        &self.records
    }

    #[inline]
    pub fn record(&self, i: usize) -> &[u32] {
        let s = self.layout.stride();
        &self.records[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn pq_code(&self, i: usize) -> &[u8] {
        let rec = self.record(i);
        &bytemuck::cast_slice(&rec[..self.layout.pq_words()])[..self.layout.pq_len]
    }

    /// Bounded code bytes and radius.
    #[inline]
    pub fn bq_code(&self, i: usize) -> (&[u8], f32) {
        let rec = self.record(i);
        let start = self.layout.pq_words();
        let radius = f32::from_bits(rec[start]);
        let words = &rec[start + 1..start + self.layout.bq_words()];
        (&bytemuck::cast_slice(words)[..self.layout.bq_len], radius)
    }

    #[inline]
    pub fn raw(&self, i: usize) -> &[f32] {
        let rec = self.record(i);
        bytemuck::cast_slice(&rec[self.layout.code_words()..])
    }
}

/// Quantizer whose codes get written into every record.
#[derive(Debug, Clone)]
pub enum Quantizer {
    Pq(PqCodebook),
    Bounded(BoundedQuantizer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    metric: Metric,
    d: usize,
    n: usize,
    params: IvfParams,
    n_cluster: usize,
    centroids: Vec<f32>,
    clusters: Vec<PostingList>,
    pq: Option<PqCodebook>,
    bq: Option<BoundedQuantizer>,
    /// (cluster, position) of every id.
    locations: Vec<(u32, u32)>,
}

impl IvfIndex {
    /// Clusters `data` and stores raw vectors. Cosine data is stored unit
    /// normalized.
    pub fn build(data: &Dataset, metric: Metric, params: IvfParams) -> Result<Self> {
        let (n, d) = (data.n, data.d);
        if n == 0 || d == 0 {
            return invalid("cannot index an empty dataset");
        }
        if n > u32::MAX as usize {
            return invalid("dataset too large for 32-bit ids");
        }
        let n_cluster = params.n_cluster.unwrap_or_else(|| default_n_cluster(n));
        if n_cluster == 0 || n_cluster > n {
            return invalid(format!("n_cluster={n_cluster} must be in 1..={n}"));
        }
        let normalized;
        let vectors: &[f32] = if metric == Metric::Cosine {
            let mut v = data.data.clone();
            for row in v.chunks_exact_mut(d) {
                normalize(row)?;
            }
            normalized = v;
            &normalized
        } else {
            &data.data
        };
        let kp = KMeansParams {
            n_centroids: n_cluster,
            iterations: params.iterations,
            seed: params.seed,
            max_points_per_centroid: params.max_points_per_centroid,
        };
        let km = train_kmeans(vectors, d, &kp)?;
        let assign = nearest_centroids(&km.centroids, d, vectors);
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); n_cluster];
        for (id, &(c, _)) in assign.iter().enumerate() {
            members[c as usize].push(id as u32);
        }
        let layout = RecordLayout {
            pq_len: 0,
            bq_len: 0,
            d,
        };
        let clusters = members
            .into_iter()
            .map(|ids| {
                let mut records = Vec::with_capacity(ids.len() * d);
                for &id in &ids {
                    let row = &vectors[id as usize * d..(id as usize + 1) * d];
                    records.extend(row.iter().map(|x| x.to_bits()));
                }
                PostingList { ids, records, layout }
            })
            .collect();
        let mut index = Self {
            metric,
            d,
            n,
            params: IvfParams {
                n_cluster: Some(n_cluster),
                ..params
            },
            n_cluster,
            centroids: km.centroids,
            clusters,
            pq: None,
            bq: None,
            locations: Vec::new(),
        };
        index.rebuild_locations()?;
        Ok(index)
    }

    fn rebuild_locations(&mut self) -> Result<()> {
        let mut loc = vec![(u32::MAX, u32::MAX); self.n];
        for (c, list) in self.clusters.iter().enumerate() {
            for (pos, &id) in list.ids.iter().enumerate() {
                let slot = loc
                    .get_mut(id as usize)
                    .ok_or_else(|| BbcError::InvalidParameter(format!("id {id} out of range")))?;
                if slot.0 != u32::MAX {
                    return invalid(format!("id {id} stored twice"));
                }
                *slot = (c as u32, pos as u32);
            }
        }
        if loc.iter().any(|l| l.0 == u32::MAX) {
            return invalid("posting lists do not cover every id");
        }
        self.locations = loc;
        Ok(())
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn params(&self) -> IvfParams {
        self.params
    }

    pub fn n_cluster(&self) -> usize {
        self.n_cluster
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.d..(c + 1) * self.d]
    }

    pub fn clusters(&self) -> &[PostingList] {
        &self.clusters
    }

    pub fn cluster(&self, c: usize) -> &PostingList {
        &self.clusters[c]
    }

    pub fn layout(&self) -> RecordLayout {
        self.clusters.first().map(|c| c.layout).unwrap_or_default()
    }

    pub fn pq(&self) -> Option<&PqCodebook> {
        self.pq.as_ref()
    }

    pub fn bq(&self) -> Option<&BoundedQuantizer> {
        self.bq.as_ref()
    }

    pub fn location(&self, id: u32) -> (usize, usize) {
        let (c, p) = self.locations[id as usize];
        (c as usize, p as usize)
    }

    /// Stored (possibly normalized) vector of `id`, by random access.
    pub fn vector(&self, id: u32) -> &[f32] {
        let (c, p) = self.location(id);
        self.clusters[c].raw(p)
    }

    /// Validates a query and normalizes it for cosine.
    pub fn prepare_query(&self, q: &[f32]) -> Result<Vec<f32>> {
        if q.len() != self.d {
            return Err(BbcError::DimensionMismatch {
                expected: self.d,
                actual: q.len(),
            });
        }
        let mut v = q.to_vec();
        if self.metric == Metric::Cosine {
            normalize(&mut v)?;
        }
        Ok(v)
    }

    /// The `n_probe` clusters nearest to a prepared query, nearest first.
    pub fn route(&self, q: &[f32], n_probe: usize) -> Result<Vec<usize>> {
        if q.len() != self.d {
            return Err(BbcError::DimensionMismatch {
                expected: self.d,
                actual: q.len(),
            });
        }
        if n_probe == 0 || n_probe > self.n_cluster {
            return invalid(format!("n_probe={n_probe} must be in 1..={}", self.n_cluster));
        }
        let mut keyed: Vec<(f32, usize)> = self
            .centroids
            .chunks_exact(self.d)
            .enumerate()
            .map(|(c, cent)| {
                let key = match self.metric {
                    Metric::Euclidean => l2_sqr(q, cent),
                    Metric::InnerProduct | Metric::Cosine => -dot(q, cent),
                };
                (key, c)
            })
            .collect();
        let cmp = |a: &(f32, usize), b: &(f32, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if n_probe < keyed.len() {
            keyed.select_nth_unstable_by(n_probe - 1, cmp);
            keyed.truncate(n_probe);
        }
        keyed.sort_unstable_by(cmp);
        Ok(keyed.into_iter().map(|(_, c)| c).collect())
    }

    /// Re-encodes every record with `quantizer`, keeping codes of the other
    /// family. Records are rewritten with the widened layout.
    pub fn attach_codes(&mut self, quantizer: Quantizer) -> Result<()> {
        let old = self.layout();
        let mut layout = old;
        match &quantizer {
            Quantizer::Pq(pq) => {
                if pq.d() != self.d {
                    return Err(BbcError::DimensionMismatch {
                        expected: self.d,
                        actual: pq.d(),
                    });
                }
                layout.pq_len = pq.code_len();
            }
            Quantizer::Bounded(bq) => {
                if bq.d() != self.d {
                    return Err(BbcError::DimensionMismatch {
                        expected: self.d,
                        actual: bq.d(),
                    });
                }
                layout.bq_len = bq.code_len();
            }
        }
        let stride = layout.stride();
        for list in &mut self.clusters {
            let mut records = vec![0u32; list.len() * stride];
            for i in 0..list.len() {
                let src = list.record(i);
                let dst = &mut records[i * stride..(i + 1) * stride];
                // carry over the sections this quantizer does not replace
                let raw = &src[old.code_words()..];
                dst[layout.code_words()..].copy_from_slice(raw);
                if !matches!(quantizer, Quantizer::Pq(_)) {
                    dst[..old.pq_words()].copy_from_slice(&src[..old.pq_words()]);
                }
                if !matches!(quantizer, Quantizer::Bounded(_)) {
                    let (a, b) = (old.pq_words(), old.code_words());
                    let at = layout.pq_words();
                    dst[at..at + (b - a)].copy_from_slice(&src[a..b]);
                }
                let v: Vec<f32> = bytemuck::cast_slice(raw).to_vec();
                match &quantizer {
                    Quantizer::Pq(pq) => {
                        let bytes: &mut [u8] = bytemuck::cast_slice_mut(&mut dst[..layout.pq_words()]);
                        pq.encode_into(&v, &mut bytes[..layout.pq_len]);
                    }
                    Quantizer::Bounded(bq) => {
                        let start = layout.pq_words();
                        let end = start + layout.bq_words();
                        let (head, codes) = dst[start..end].split_at_mut(1);
                        let bytes: &mut [u8] = bytemuck::cast_slice_mut(codes);
                        let radius = bq.encode_into(&v, &mut bytes[..layout.bq_len]);
                        head[0] = radius.to_bits();
                    }
                }
            }
            list.records = records;
            list.layout = layout;
        }
        match quantizer {
            Quantizer::Pq(pq) => self.pq = Some(pq),
            Quantizer::Bounded(bq) => self.bq = Some(bq),
        }
        Ok(())
    }

    /// Up to `max_rows` stored vectors drawn deterministically.
    pub fn sample_vectors(&self, max_rows: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let take = max_rows.min(self.n);
        let mut ids = index::sample(&mut rng, self.n, take).into_vec();
        ids.sort_unstable();
        ids.iter()
            .flat_map(|&id| self.vector(id as u32).iter().copied())
            .collect()
    }

    /// Trains a product quantizer on a sample of the stored vectors and
    /// attaches its codes.
    pub fn train_pq(&mut self, sub_dim: usize, bits: u32, seed: u64) -> Result<()> {
        let sample = self.sample_vectors(1 << 16, seed);
        let pq = pq_train(&sample, self.d, sub_dim, bits, seed)?;
        self.attach_codes(Quantizer::Pq(pq))
    }

    /// Fits the bounded quantizer to the full stored range and attaches codes.
    pub fn train_bq(&mut self, levels: usize) -> Result<()> {
        let mut lo = vec![f32::INFINITY; self.d];
        let mut hi = vec![f32::NEG_INFINITY; self.d];
        let mut max_norm = 0.0f32;
        for list in &self.clusters {
            for i in 0..list.len() {
                let v = list.raw(i);
                for j in 0..self.d {
                    lo[j] = lo[j].min(v[j]);
                    hi[j] = hi[j].max(v[j]);
                }
                max_norm = max_norm.max(dot(v, v).sqrt());
            }
        }
        let bq = BoundedQuantizer::from_ranges(&lo, &hi, levels, max_norm)?;
        self.attach_codes(Quantizer::Bounded(bq))
    }
}

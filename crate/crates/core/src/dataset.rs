//! Benchmark vector files, synthetic corpora, and brute-force ground truth.
//!
//! File layouts (little-endian throughout):
//! - `fvecs` / `ivecs`: repeated `[i32 d][d x 4-byte element]` records.
//! - `fbin` / `ibin`: header `[i32 n][i32 d]` followed by `n x d` elements.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bytemuck::Pod;
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, BbcError, Result};
use crate::metric::{distance_f64, Candidate, Metric, ResultSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecFormat {
    Fvecs,
    Ivecs,
    Fbin,
    Ibin,
}

impl VecFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "fvecs" => Some(VecFormat::Fvecs),
            "ivecs" => Some(VecFormat::Ivecs),
            "fbin" => Some(VecFormat::Fbin),
            "ibin" => Some(VecFormat::Ibin),
            _ => None,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, VecFormat::Fvecs | VecFormat::Fbin)
    }

    fn has_header(self) -> bool {
        matches!(self, VecFormat::Fbin | VecFormat::Ibin)
    }
}

/// Element types a vector file can hold.
pub trait Element: Pod + Copy + Default + Send + Sync {
    const IS_FLOAT: bool;
}

impl Element for f32 {
    const IS_FLOAT: bool = true;
}

impl Element for i32 {
    const IS_FLOAT: bool = false;
}

impl Element for u32 {
    const IS_FLOAT: bool = false;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Memory,
    File(PathBuf),
    Synthetic { distribution: Distribution, seed: u64 },
}

/// Dense row-major `n x d` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub n: usize,
    pub d: usize,
    pub data: Vec<T>,
    pub source: Source,
}

pub type Dataset = Matrix<f32>;

impl<T: Element> Matrix<T> {
    pub fn new(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * d {
            return invalid(format!("data length {} does not match {n} x {d}", data.len()));
        }
        Ok(Self {
            n,
            d,
            data,
            source: Source::Memory,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.d.max(1)).take(self.n)
    }

    /// Copies the first `count` rows.
    pub fn head(&self, count: usize) -> Self {
        let count = count.min(self.n);
        Self {
            n: count,
            d: self.d,
            data: self.data[..count * self.d].to_vec(),
            source: self.source.clone(),
        }
    }
}

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(BbcError::Parse {
        offset: offset as u64,
        message: message.into(),
    })
}

fn read_i32(bytes: &[u8], at: usize) -> Result<i32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        None => parse_err(at, "truncated header"),
    }
}

fn check_kind<T: Element>(format: VecFormat) -> Result<()> {
    if format.is_float() != T::IS_FLOAT {
        return invalid(format!("{format:?} does not hold this element type"));
    }
    Ok(())
}

/// Parses a vector file already loaded into memory.
pub fn parse_vectors<T: Element>(bytes: &[u8], format: VecFormat) -> Result<Matrix<T>> {
    check_kind::<T>(format)?;
    if format.has_header() {
        let n = read_i32(bytes, 0)?;
        let d = read_i32(bytes, 4)?;
        if n < 0 {
            return parse_err(0, format!("negative count {n}"));
        }
        if d <= 0 {
            return parse_err(4, format!("non-positive dimension {d}"));
        }
        let (n, d) = (n as usize, d as usize);
        let body = &bytes[8..];
        let want = n * d * 4;
        if body.len() < want {
            return parse_err(bytes.len(), format!("truncated: expected {} bytes", 8 + want));
        }
        if body.len() > want {
            return parse_err(8 + want, "trailing bytes after last vector");
        }
        let mut data = vec![T::default(); n * d];
        bytemuck::cast_slice_mut::<T, u8>(&mut data).copy_from_slice(body);
        return Matrix::new(n, d, data);
    }

    let mut data: Vec<T> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut n = 0usize;
    let mut at = 0usize;
    while at < bytes.len() {
        let d = read_i32(bytes, at)?;
        if d <= 0 {
            return parse_err(at, format!("non-positive dimension {d}"));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(prev) if prev != d => return parse_err(at, format!("inconsistent dimension {d}, expected {prev}")),
            _ => {}
        }
        let start = at + 4;
        let end = start + d * 4;
        if end > bytes.len() {
            return parse_err(bytes.len(), format!("truncated record starting at byte {at}"));
        }
        let old = data.len();
        data.resize(old + d, T::default());
        bytemuck::cast_slice_mut::<T, u8>(&mut data[old..]).copy_from_slice(&bytes[start..end]);
        n += 1;
        at = end;
    }
    Matrix::new(n, dim.unwrap_or(0), data)
}

pub fn read_vectors<T: Element>(path: &Path, format: VecFormat) -> Result<Matrix<T>> {
    let bytes = fs::read(path)?;
    let mut m = parse_vectors(&bytes, format)?;
    m.source = Source::File(path.to_path_buf());
    Ok(m)
}

pub fn encode_vectors<T: Element>(m: &Matrix<T>, format: VecFormat) -> Result<Vec<u8>> {
    check_kind::<T>(format)?;
    if m.data.len() != m.n * m.d {
        return invalid("matrix length does not match n x d");
    }
    let d = i32::try_from(m.d).map_err(|_| BbcError::InvalidParameter("d too large".into()))?;
    let mut out = Vec::with_capacity(8 + m.n * (m.d * 4 + 4));
    if format.has_header() {
        let n = i32::try_from(m.n).map_err(|_| BbcError::InvalidParameter("n too large".into()))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        out.extend_from_slice(bytemuck::cast_slice(&m.data));
    } else {
        for row in m.rows() {
            out.extend_from_slice(&d.to_le_bytes());
            out.extend_from_slice(bytemuck::cast_slice(row));
        }
    }
    Ok(out)
}

pub fn write_vectors<T: Element>(m: &Matrix<T>, path: &Path, format: VecFormat) -> Result<()> {
    let bytes = encode_vectors(m, format)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads a float dataset, inferring the format from the file extension.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let format = VecFormat::from_path(path)
        .ok_or_else(|| BbcError::InvalidParameter(format!("unknown extension: {}", path.display())))?;
    read_vectors(path, format)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// i.i.d. standard normal components.
    Gaussian,
    /// `centers` standard-normal centers, points at `spread` standard deviation around them.
    Clustered { centers: usize, spread: f32 },
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Gaussian => f.write_str("gaussian"),
            Distribution::Clustered { centers, spread } => write!(f, "clustered:{centers}:{spread}"),
        }
    }
}

impl FromStr for Distribution {
    type Err = BbcError;

    /// `gaussian` or `clustered:<centers>:<spread>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["gaussian"] => Ok(Distribution::Gaussian),
            ["clustered", c, sp] => {
                let centers = c
                    .parse()
                    .map_err(|_| BbcError::InvalidParameter(format!("bad center count '{c}'")))?;
                let spread = sp
                    .parse()
                    .map_err(|_| BbcError::InvalidParameter(format!("bad spread '{sp}'")))?;
                Ok(Distribution::Clustered { centers, spread })
            }
            _ => invalid(format!("unknown distribution '{s}'")),
        }
    }
}

const QUERY_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn synth(n: usize, d: usize, distribution: Distribution, seed: u64, stream: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return invalid("synthetic dataset needs n > 0 and d > 0");
    }
    let centers = match distribution {
        Distribution::Gaussian => Vec::new(),
        Distribution::Clustered { centers, spread } => {
            if centers == 0 || !(spread >= 0.0) {
                return invalid("clustered distribution needs centers > 0 and spread >= 0");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..centers * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream);
    let mut data = Vec::with_capacity(n * d);
    match distribution {
        Distribution::Gaussian => {
            data.extend((0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)));
        }
        Distribution::Clustered { centers: c, spread } => {
            for _ in 0..n {
                let center = rng.random_range(0..c);
                let base = &centers[center * d..(center + 1) * d];
                data.extend(base.iter().map(|&x| x + spread * rng.sample::<f32, _>(StandardNormal)));
            }
        }
    }
    Ok(Matrix {
        n,
        d,
        data,
        source: Source::Synthetic { distribution, seed },
    })
}

/// Deterministic synthetic corpus.
pub fn synth_dataset(n: usize, d: usize, distribution: Distribution, seed: u64) -> Result<Dataset> {
    synth(n, d, distribution, seed, 0)
}

/// Held-out queries drawn from the same distribution (same cluster centers)
/// as `synth_dataset` with the same seed, but never members of it.
pub fn synth_queries(n: usize, d: usize, distribution: Distribution, seed: u64) -> Result<Dataset> {
    synth(n, d, distribution, seed, QUERY_STREAM)
}

/// Exact top-k rows, distances ascending, ties broken by smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub k: usize,
    pub ids: Vec<u32>,
    pub dists: Vec<f32>,
}

impl GroundTruth {
    pub fn num_queries(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.ids.len() / self.k
        }
    }

    pub fn row_ids(&self, q: usize) -> &[u32] {
        &self.ids[q * self.k..(q + 1) * self.k]
    }

    pub fn row_dists(&self, q: usize) -> &[f32] {
        &self.dists[q * self.k..(q + 1) * self.k]
    }

    /// Row `q` truncated to its first `k` entries.
    pub fn result(&self, q: usize, k: usize) -> ResultSet {
        let k = k.min(self.k);
        let items = self.row_ids(q)[..k]
            .iter()
            .zip(&self.row_dists(q)[..k])
            .map(|(&id, &dist)| Candidate::new(id, dist))
            .collect();
        ResultSet::new(k, items)
    }

    /// Writes `<stem>.ibin` (ids) and `<stem>.fbin` (distances).
    pub fn save(&self, ids_path: &Path, dists_path: &Path) -> Result<()> {
        let nq = self.num_queries();
        write_vectors(&Matrix::new(nq, self.k, self.ids.clone())?, ids_path, VecFormat::Ibin)?;
        write_vectors(
            &Matrix::new(nq, self.k, self.dists.clone())?,
            dists_path,
            VecFormat::Fbin,
        )
    }

    pub fn load(ids_path: &Path, dists_path: &Path) -> Result<Self> {
        let ids: Matrix<u32> = read_vectors(ids_path, VecFormat::Ibin)?;
        let dists: Matrix<f32> = read_vectors(dists_path, VecFormat::Fbin)?;
        if ids.n != dists.n || ids.d != dists.d {
            return invalid("ground-truth id and distance files disagree in shape");
        }
        Ok(Self {
            k: ids.d,
            ids: ids.data,
            dists: dists.data,
        })
    }
}

/// Rows of the dataset processed per matrix product.
const BLOCK_ROWS: usize = 8192;
const QUERY_BLOCK: usize = 64;

/// Exact k nearest neighbours of every query by full scan.
///
/// A single-precision matrix product preselects a slightly larger pool per
/// query; the pool is then re-scored with 64-bit accumulation, sorted by
/// (distance, id), and truncated to k.
pub fn brute_force_topk(data: &Dataset, queries: &Dataset, k: usize, metric: Metric) -> Result<GroundTruth> {
    if data.d != queries.d {
        return Err(BbcError::DimensionMismatch {
            expected: data.d,
            actual: queries.d,
        });
    }
    if k == 0 || k > data.n {
        return invalid(format!("k = {k} must be in 1..={}", data.n));
    }
    let d = data.d;
    let pool = (k + (k / 50).max(64)).min(data.n);
    let norms: Vec<f32> = data.rows().map(|r| r.iter().map(|x| x * x).sum()).collect();

    let rows: Vec<Vec<(u32, f32)>> = (0..queries.n)
        .collect::<Vec<_>>()
        .par_chunks(QUERY_BLOCK)
        .flat_map_iter(|chunk| {
            let (q0, q1) = (chunk[0], chunk[chunk.len() - 1] + 1);
            let qv = ArrayView2::from_shape((q1 - q0, d), &queries.data[q0 * d..q1 * d]).unwrap();
            let qnorms: Vec<f32> = qv.rows().into_iter().map(|r| r.dot(&r)).collect();
            let mut pools: Vec<Vec<Candidate>> = vec![Vec::with_capacity(pool * 2); q1 - q0];
            let mut thresholds = vec![f32::INFINITY; q1 - q0];
            let mut start = 0;
            while start < data.n {
                let end = (start + BLOCK_ROWS).min(data.n);
                let bv = ArrayView2::from_shape((end - start, d), &data.data[start * d..end * d]).unwrap();
                let dots = qv.dot(&bv.t());
                for (qi, row) in dots.rows().into_iter().enumerate() {
                    let buf = &mut pools[qi];
                    let thr = thresholds[qi];
                    for (j, &dp) in row.iter().enumerate() {
                        let id = start + j;
                        let key = match metric {
                            Metric::Euclidean => qnorms[qi] + norms[id] - 2.0 * dp,
                            Metric::InnerProduct => -dp,
                            Metric::Cosine => -dp / (qnorms[qi] * norms[id]).sqrt(),
                        };
                        if key <= thr {
                            buf.push(Candidate::new(id as u32, key));
                        }
                    }
                    if buf.len() > 2 * pool {
                        buf.select_nth_unstable_by(pool - 1, Candidate::cmp_key);
                        buf.truncate(pool);
                        thresholds[qi] = buf.iter().map(|c| c.dist).fold(f32::NEG_INFINITY, f32::max);
                    }
                }
                start = end;
            }
            pools
                .into_iter()
                .enumerate()
                .map(|(qi, cands)| {
                    let q = queries.row(q0 + qi);
                    let mut exact: Vec<(f64, u32)> = cands
                        .iter()
                        .map(|c| {
                            (
                                distance_f64(q, data.row(c.id as usize), metric).unwrap_or(f64::INFINITY),
                                c.id,
                            )
                        })
                        .collect();
                    exact.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    exact.truncate(k);
                    exact.into_iter().map(|(dd, id)| (id, dd as f32)).collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut ids = Vec::with_capacity(queries.n * k);
    let mut dists = Vec::with_capacity(queries.n * k);
    for row in rows {
        for (id, dd) in row {
            ids.push(id);
            dists.push(dd);
        }
    }
    Ok(GroundTruth { k, ids, dists })
}

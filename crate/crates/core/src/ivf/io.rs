//! Single-file index persistence, little-endian throughout.
//!
//! ```text
//! "BBCI" version:u32 metric:u32 n:u64 d:u32 n_cluster:u32
//! iterations:u32 seed:u64 max_points_per_centroid:u32
//! centroids: n_cluster*d f32
//! pq_len:u32 bq_len:u32
//! per cluster: len:u32 ids:len*u32 records:len*stride*u32
//! sections: tag:[u8;4] bytes:u64 payload   ("PQCB", "BQCB")
//! ```

use std::fs;
use std::path::Path;

use super::{IvfIndex, IvfParams, PostingList, RecordLayout};
use crate::error::{invalid, BbcError, Result};
use crate::metric::Metric;
use crate::quant::{BoundedQuantizer, PqCodebook};

pub const MAGIC: &[u8; 4] = b"BBCI";
pub const FORMAT_VERSION: u32 = 1;

const TAG_PQ: &[u8; 4] = b"PQCB";
const TAG_BQ: &[u8; 4] = b"BQCB";

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.u32(v.to_bits());
    }

    fn words(&mut self, v: &[u32]) {
        for &w in v {
            self.u32(w);
        }
    }

    fn floats(&mut self, v: &[f32]) {
        for &x in v {
            self.f32(x);
        }
    }

    fn section(&mut self, tag: &[u8; 4], body: Writer) {
        self.buf.extend_from_slice(tag);
        self.u64(body.buf.len() as u64);
        self.buf.extend_from_slice(&body.buf);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(BbcError::Parse {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(len) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => self.fail(format!("truncated: wanted {len} more bytes")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }

    fn count(&mut self, n: u64, unit: usize) -> Result<usize> {
        match usize::try_from(n).ok().and_then(|n| n.checked_mul(unit)) {
            Some(b) if b <= self.bytes.len() - self.pos => Ok(n as usize),
            _ => self.fail(format!("count {n} exceeds the remaining file")),
        }
    }

    fn words(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n.checked_mul(4).unwrap_or(usize::MAX))?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.words(n)?.into_iter().map(f32::from_bits).collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

impl IvfIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(self.metric.code());
        w.u64(self.n as u64);
        w.u32(self.d as u32);
        w.u32(self.n_cluster as u32);
        w.u32(self.params.iterations as u32);
        w.u64(self.params.seed);
        w.u32(self.params.max_points_per_centroid as u32);
        w.floats(&self.centroids);
        let layout = self.layout();
        w.u32(layout.pq_len as u32);
        w.u32(layout.bq_len as u32);
        for list in &self.clusters {
            w.u32(list.len() as u32);
            w.words(&list.ids);
            w.words(&list.records);
        }
        if let Some(pq) = &self.pq {
            let mut s = Writer::default();
            s.u32(pq.d() as u32);
            s.u32(pq.sub_dim() as u32);
            s.u32(pq.bits());
            s.floats(pq.centroids());
            w.section(TAG_PQ, s);
        }
        if let Some(bq) = &self.bq {
            let mut s = Writer::default();
            s.u32(bq.d() as u32);
            s.u32(bq.levels() as u32);
            s.f32(bq.radius());
            s.f32(bq.max_norm());
            s.f32(bq.range_norm());
            s.floats(bq.lo());
            s.floats(bq.delta());
            w.section(TAG_BQ, s);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(BbcError::Parse {
                offset: 0,
                message: "not an index file (bad magic)".into(),
            });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return r.fail(format!("unsupported index version {version}"));
        }
        let metric_code = r.u32()?;
        let Some(metric) = Metric::from_code(metric_code) else {
            return r.fail(format!("unknown metric code {metric_code}"));
        };
        let n = r.u64()?;
        let d = r.u32()? as usize;
        let n_cluster = r.u32()? as usize;
        let iterations = r.u32()? as usize;
        let seed = r.u64()?;
        let max_ppc = r.u32()? as usize;
        if d == 0 || n_cluster == 0 || n > u32::MAX as u64 {
            return r.fail("invalid header dimensions");
        }
        let n = n as usize;
        let n_cent = r.count((n_cluster * d) as u64, 4)?;
        let centroids = r.floats(n_cent)?;
        let layout = RecordLayout {
            pq_len: r.u32()? as usize,
            bq_len: r.u32()? as usize,
            d,
        };
        let stride = layout.stride();
        let mut clusters = Vec::with_capacity(n_cluster);
        for _ in 0..n_cluster {
            let len = r.u32()? as u64;
            let len = r.count(len, 4 * (1 + stride))?;
            let ids = r.words(len)?;
            let records = r.words(len * stride)?;
            clusters.push(PostingList { ids, records, layout });
        }
        let (mut pq, mut bq) = (None, None);
        while !r.done() {
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let len = r.u64()?;
            let len = r.count(len, 1)?;
            let body = r.take(len)?;
            let mut s = Reader { bytes: body, pos: 0 };
            match &tag {
                TAG_PQ => {
                    let pd = s.u32()? as usize;
                    let sub_dim = s.u32()? as usize;
                    let bits = s.u32()?;
                    let rest = (body.len() - s.pos) / 4;
                    let cb = PqCodebook::from_centroids(pd, sub_dim, bits, s.floats(rest)?)?;
                    pq = Some(cb);
                }
                TAG_BQ => {
                    let bd = s.u32()? as usize;
                    let levels = s.u32()? as usize;
                    let half = s.f32()?;
                    let max_norm = s.f32()?;
                    let range_norm = s.f32()?;
                    let lo = s.floats(bd)?;
                    let delta = s.floats(bd)?;
                    bq = Some(BoundedQuantizer::from_parts(
                        levels, lo, delta, half, max_norm, range_norm,
                    )?);
                }
                _ => {
                    log::warn!("skipping unknown index section {:?}", String::from_utf8_lossy(&tag));
                }
            }
        }
        if pq.as_ref().map_or(0, PqCodebook::code_len) != layout.pq_len
            || bq.as_ref().map_or(0, BoundedQuantizer::code_len) != layout.bq_len
        {
            return invalid("record layout does not match the stored codebooks");
        }
        let mut index = IvfIndex {
            metric,
            d,
            n,
            params: IvfParams {
                n_cluster: Some(n_cluster),
                iterations,
                seed,
                max_points_per_centroid: max_ppc,
            },
            n_cluster,
            centroids,
            clusters,
            pq,
            bq,
            locations: Vec::new(),
        };
        index.rebuild_locations()?;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

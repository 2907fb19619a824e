use crate::error::{invalid, BbcError, Result};
use crate::metric::{dot, norm, Metric};

pub const DEFAULT_LEVELS: usize = 256;

/// Per-dimension uniform scalar quantizer with a deterministic error radius.
///
/// Each dimension's range `[lo, hi]` is split into `levels` cells of width
/// `delta`; a value is stored as its cell index and reconstructed at the cell
/// center. Any in-range vector therefore lies within the half-cell diagonal
/// of its reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedQuantizer {
    d: usize,
    levels: usize,
    lo: Vec<f32>,
    delta: Vec<f32>,
    half_diag: f32,
    /// Largest vector norm seen in training plus the radius; scales the
    /// rounding slack of inner-product bounds.
    max_norm: f32,
    /// Norm of the per-dimension max(|lo|, |hi|); scales euclidean slack.
    range_norm: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundedCode {
    /// Little-endian cell indices, one byte per dimension when `levels <= 256`
    /// and two otherwise.
    pub code: Vec<u8>,
    pub radius: f32,
}

impl BoundedQuantizer {
    /// Derives per-dimension ranges from `data` (row-major, `d` columns).
    pub fn train(data: &[f32], d: usize, levels: usize) -> Result<Self> {
        if d == 0 || data.is_empty() || data.len() % d != 0 {
            return invalid("bounded quantizer needs a non-empty row-major sample");
        }
        let mut lo = vec![f32::INFINITY; d];
        let mut hi = vec![f32::NEG_INFINITY; d];
        let mut max_norm = 0.0f32;
        for row in data.chunks_exact(d) {
            for j in 0..d {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
            max_norm = max_norm.max(norm(row));
        }
        Self::from_ranges(&lo, &hi, levels, max_norm)
    }

    pub fn from_ranges(lo: &[f32], hi: &[f32], levels: usize, max_norm: f32) -> Result<Self> {
        if !(2..=1 << 16).contains(&levels) {
            return invalid(format!("levels={levels} must be in 2..=65536"));
        }
        if lo.len() != hi.len() || lo.is_empty() {
            return invalid("range vectors must be non-empty and equally long");
        }
        if lo.iter().chain(hi).any(|x| !x.is_finite()) || lo.iter().zip(hi).any(|(a, b)| a > b) {
            return invalid("ranges must be finite with lo <= hi");
        }
        let delta: Vec<f32> = lo.iter().zip(hi).map(|(&a, &b)| (b - a) / levels as f32).collect();
        let half_diag = round_up(
            delta
                .iter()
                .map(|&x| {
                    let h = x as f64 / 2.0;
                    h * h
                })
                .sum::<f64>()
                .sqrt() as f32,
        );
        let range_norm = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| {
                let m = a.abs().max(b.abs()) as f64;
                m * m
            })
            .sum::<f64>()
            .sqrt() as f32;
        Ok(Self {
            d: lo.len(),
            levels,
            lo: lo.to_vec(),
            delta,
            half_diag,
            max_norm: max_norm + half_diag,
            range_norm,
        })
    }

    /// Reassembles a quantizer from its serialized fields.
    pub(crate) fn from_parts(
        levels: usize,
        lo: Vec<f32>,
        delta: Vec<f32>,
        half_diag: f32,
        max_norm: f32,
        range_norm: f32,
    ) -> Result<Self> {
        if !(2..=1 << 16).contains(&levels) || lo.len() != delta.len() || lo.is_empty() {
            return invalid("malformed bounded quantizer");
        }
        Ok(Self {
            d: lo.len(),
            levels,
            lo,
            delta,
            half_diag,
            max_norm,
            range_norm,
        })
    }

    pub(crate) fn range_norm(&self) -> f32 {
        self.range_norm
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn lo(&self) -> &[f32] {
        &self.lo
    }

    pub fn delta(&self) -> &[f32] {
        &self.delta
    }

    pub fn max_norm(&self) -> f32 {
        self.max_norm
    }

    /// Radius of every in-range vector.
    pub fn radius(&self) -> f32 {
        self.half_diag
    }

    /// Bytes per dimension in a code.
    pub fn width(&self) -> usize {
        if self.levels <= 256 {
            1
        } else {
            2
        }
    }

    pub fn code_len(&self) -> usize {
        self.d * self.width()
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

    #[inline]
    fn cell(&self, j: usize, x: f32) -> usize {
        if self.delta[j] > 0.0 {
            let c = ((x - self.lo[j]) / self.delta[j]).floor();
            c.clamp(0.0, (self.levels - 1) as f32) as usize
        } else {
            0
        }
    }

    #[inline]
    fn center(&self, j: usize, c: usize) -> f32 {
        self.lo[j] + (c as f32 + 0.5) * self.delta[j]
    }

    fn read(&self, code: &[u8], j: usize) -> usize {
        match self.width() {
            1 => code[j] as usize,
            _ => u16::from_le_bytes([code[2 * j], code[2 * j + 1]]) as usize,
        }
    }

    pub fn encode(&self, v: &[f32]) -> Result<BoundedCode> {
        self.check_dim(v.len())?;
        let mut code = vec![0u8; self.code_len()];
        let radius = self.encode_into(v, &mut code);
        Ok(BoundedCode { code, radius })
    }

    /// Writes the code into `out` and returns the object's radius: the
    /// half-cell diagonal, widened when the measured error exceeds it
    /// (out-of-range components, rounding).
    pub fn encode_into(&self, v: &[f32], out: &mut [u8]) -> f32 {
        let mut err = 0.0f64;
        for (j, &x) in v.iter().enumerate() {
            let c = self.cell(j, x);
            match self.width() {
                1 => out[j] = c as u8,
                _ => out[2 * j..2 * j + 2].copy_from_slice(&(c as u16).to_le_bytes()),
            }
            let e = x as f64 - self.center(j, c) as f64;
            err += e * e;
        }
        let measured = round_up(err.sqrt() as f32);
        self.half_diag.max(measured)
    }

    pub fn reconstruct(&self, code: &BoundedCode) -> Result<Vec<f32>> {
        if code.code.len() != self.code_len() {
            return invalid("code length does not match the quantizer");
        }
        Ok((0..self.d).map(|j| self.center(j, self.read(&code.code, j))).collect())
    }

    /// Precomputes per-query state for [`BqQuery::bounds`].
    pub fn query(&self, q: &[f32], metric: Metric) -> Result<BqQuery> {
        self.check_dim(q.len())?;
        let q_norm = norm(q);
        let eps = f32::EPSILON * (self.d as f32 + 2.0);
        let (coef, offset, slack_fixed) = match metric {
            Metric::Euclidean => {
                // q - center = (q - lo - delta/2) - c * delta
                let a: Vec<f32> = (0..self.d).map(|j| q[j] - self.lo[j] - 0.5 * self.delta[j]).collect();
                let fixed = 6.0 * f32::EPSILON * (q_norm + 2.0 * self.range_norm);
                (a, 0.0, fixed)
            }
            Metric::InnerProduct | Metric::Cosine => {
                let qd: Vec<f32> = q.iter().zip(&self.delta).map(|(&x, &dl)| x * dl).collect();
                let base: Vec<f32> = (0..self.d).map(|j| self.lo[j] + 0.5 * self.delta[j]).collect();
                let fixed = 2.0 * eps * q_norm * (self.max_norm + 2.0 * self.range_norm);
                (qd, dot(q, &base), fixed)
            }
        };
        Ok(BqQuery {
            metric,
            width: self.width(),
            delta: self.delta.clone(),
            coef,
            offset,
            q_norm,
            eps,
            slack_fixed,
        })
    }
}

/// Per-query bound evaluator.
#[derive(Debug, Clone)]
pub struct BqQuery {
    metric: Metric,
    width: usize,
    delta: Vec<f32>,
    coef: Vec<f32>,
    offset: f32,
    q_norm: f32,
    eps: f32,
    slack_fixed: f32,
}

impl BqQuery {
    /// Estimated key from the reconstruction.
    #[inline]
    pub fn estimate(&self, code: &[u8]) -> f32 {
        match (self.metric, self.width) {
            (Metric::Euclidean, 1) => {
                let mut acc = [0.0f32; 8];
                let chunks = code.len() / 8;
                for c in 0..chunks {
                    for l in 0..8 {
                        let j = c * 8 + l;
                        let t = self.coef[j] - code[j] as f32 * self.delta[j];
                        acc[l] += t * t;
                    }
                }
                let mut s: f32 = acc.iter().sum();
                for j in chunks * 8..code.len() {
                    let t = self.coef[j] - code[j] as f32 * self.delta[j];
                    s += t * t;
                }
                s.sqrt()
            }
            (Metric::Euclidean, _) => {
                let mut s = 0.0f32;
                for (j, b) in code.chunks_exact(2).enumerate() {
                    let c = u16::from_le_bytes([b[0], b[1]]) as f32;
                    let t = self.coef[j] - c * self.delta[j];
                    s += t * t;
                }
                s.sqrt()
            }
            (_, 1) => {
                let mut acc = [0.0f32; 8];
                let chunks = code.len() / 8;
                for c in 0..chunks {
                    for l in 0..8 {
                        let j = c * 8 + l;
                        acc[l] += self.coef[j] * code[j] as f32;
                    }
                }
                let mut s: f32 = acc.iter().sum();
                for j in chunks * 8..code.len() {
                    s += self.coef[j] * code[j] as f32;
                }
                -(self.offset + s)
            }
            _ => {
                let mut s = 0.0f32;
                for (j, b) in code.chunks_exact(2).enumerate() {
                    s += self.coef[j] * u16::from_le_bytes([b[0], b[1]]) as f32;
                }
                -(self.offset + s)
            }
        }
    }

    /// Guaranteed (lower, upper) interval around the exact key. Widened by a
    /// rounding slack so the f32 exact key always falls inside.
    #[inline]
    pub fn bounds(&self, code: &[u8], radius: f32) -> (f32, f32) {
        let est = self.estimate(code);
        match self.metric {
            Metric::Euclidean => {
                let slack = self.eps * (est + radius) + self.slack_fixed;
                ((est - radius - slack).max(0.0), est + radius + slack)
            }
            Metric::InnerProduct | Metric::Cosine => {
                let half = self.q_norm * radius + self.slack_fixed;
                (est - half, est + half)
            }
        }
    }
}

fn round_up(x: f32) -> f32 {
    if x > 0.0 {
        x.next_up()
    } else {
        x
    }
}

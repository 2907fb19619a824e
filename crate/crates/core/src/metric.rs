//! Distance vocabulary shared by every module.
//!
//! All metrics are exposed as an ascending comparison key: smaller means
//! closer. Inner product and cosine are negated similarities so that buckets,
//! heaps, and thresholds never need to know which metric produced a key.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{BbcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    InnerProduct,
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::InnerProduct => "inner-product",
            Metric::Cosine => "cosine",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Metric::Euclidean => 0,
            Metric::InnerProduct => 1,
            Metric::Cosine => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::InnerProduct),
            2 => Some(Metric::Cosine),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = BbcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "inner-product" | "ip" | "dot" => Ok(Metric::InnerProduct),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(BbcError::InvalidParameter(format!("unknown metric '{other}'"))),
        }
    }
}

/// One scanned object: its id and comparison key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: u32,
    pub dist: f32,
}

impl Candidate {
    pub fn new(id: u32, dist: f32) -> Self {
        Self { id, dist }
    }

    /// Total order on (dist, id); the tie-break every collector shares.
    #[inline]
    pub fn cmp_key(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then_with(|| self.id.cmp(&other.id))
    }
}

/// The outcome of a top-k query.
///
/// `items` holds at most `k` candidates. When fewer than `k` objects were
/// available the set is short; see [`ResultSet::is_short`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultSet {
    pub k: usize,
    pub items: Vec<Candidate>,
}

impl ResultSet {
    pub fn new(k: usize, items: Vec<Candidate>) -> Self {
        Self { k, items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_short(&self) -> bool {
        self.items.len() < self.k
    }

    pub fn ids(&self) -> Vec<u32> {
        self.items.iter().map(|c| c.id).collect()
    }

    /// Sorts ascending by (dist, id).
    pub fn sort(&mut self) {
        self.items.sort_unstable_by(Candidate::cmp_key);
    }

    pub fn sorted(mut self) -> Self {
        self.sort();
        self
    }
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn l2_sqr(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for i in 0..8 {
            let t = x[i] - y[i];
            acc[i] += t * t;
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        let t = a[i] - b[i];
        s += t * t;
    }
    s
}

#[inline]
pub fn norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

/// Comparison key between two vectors under `metric`.
pub fn distance(a: &[f32], b: &[f32], metric: Metric) -> Result<f32> {
    if a.len() != b.len() {
        return Err(BbcError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    match metric {
        Metric::Euclidean => Ok(l2_sqr(a, b).sqrt()),
        Metric::InnerProduct => Ok(-dot(a, b)),
        Metric::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(BbcError::ZeroNorm);
            }
            Ok(-dot(a, b) / (na * nb))
        }
    }
}

/// Unchecked key for callers that already validated shapes. Cosine callers
/// must pass unit-norm vectors, which is how the index stores them.
#[inline]
pub(crate) fn key_unchecked(a: &[f32], b: &[f32], metric: Metric) -> f32 {
    match metric {
        Metric::Euclidean => l2_sqr(a, b).sqrt(),
        Metric::InnerProduct | Metric::Cosine => -dot(a, b),
    }
}

/// 64-bit accumulation variant used by the ground-truth oracle.
pub fn distance_f64(a: &[f32], b: &[f32], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BbcError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let dot64 = |x: &[f32], y: &[f32]| -> f64 { x.iter().zip(y).map(|(&p, &q)| p as f64 * q as f64).sum() };
    match metric {
        Metric::Euclidean => Ok(a
            .iter()
            .zip(b)
            .map(|(&p, &q)| {
                let t = p as f64 - q as f64;
                t * t
            })
            .sum::<f64>()
            .sqrt()),
        Metric::InnerProduct => Ok(-dot64(a, b)),
        Metric::Cosine => {
            let (na, nb) = (dot64(a, a).sqrt(), dot64(b, b).sqrt());
            if na == 0.0 || nb == 0.0 {
                return Err(BbcError::ZeroNorm);
            }
            Ok(-dot64(a, b) / (na * nb))
        }
    }
}

/// Scales `v` to unit length in place.
pub fn normalize(v: &mut [f32]) -> Result<()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(BbcError::ZeroNorm);
    }
    let inv = 1.0 / n;
    v.iter_mut().for_each(|x| *x *= inv);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_triangle() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(distance(&a, &a, Metric::Euclidean).unwrap(), 0.0);
        assert_eq!(distance(&[0.0, 0.0], &[3.0, 4.0], Metric::Euclidean).unwrap(), 5.0);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut ss = 0.0f64;
            for i in 0..64 {
                let t = a[i] as f64 - b[i] as f64;
                ss += t * t;
            }
            let want = ss.sqrt();
            let got = distance(&a, &b, Metric::Euclidean).unwrap() as f64;
            assert!((got - want).abs() <= 1e-5 * want);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            distance(&[1.0], &[1.0, 2.0], Metric::Euclidean),
            Err(BbcError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            distance(&[0.0, 0.0], &[1.0, 2.0], Metric::Cosine),
            Err(BbcError::ZeroNorm)
        ));
    }

    #[test]
    fn similarities_are_negated() {
        let a = [1.0, 0.0];
        let b = [2.0, 0.0];
        assert_eq!(distance(&a, &b, Metric::InnerProduct).unwrap(), -2.0);
        assert_eq!(distance(&a, &b, Metric::Cosine).unwrap(), -1.0);
    }

    proptest::proptest! {
        #[test]
        fn symmetric(a in proptest::collection::vec(-10.0f32..10.0, 1..40usize), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f32> = (0..a.len()).map(|_| rng.random_range(-10.0..10.0)).collect();
            for m in [Metric::Euclidean, Metric::InnerProduct] {
                proptest::prop_assert_eq!(distance(&a, &b, m).unwrap(), distance(&b, &a, m).unwrap());
            }
        }
    }
}

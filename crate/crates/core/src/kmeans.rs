//! Lloyd's k-means with k-means++ seeding, shared by the IVF coarse quantizer
//! and the per-subspace PQ codebooks.

use ndarray::ArrayView2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::metric::{dot, l2_sqr};

/// Below this dimensionality direct loops beat a GEMM round trip.
const GEMM_MIN_DIM: usize = 16;
const ASSIGN_BLOCK: usize = 1024;
const SPLIT_EPS: f32 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansParams {
    pub n_centroids: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Training subsample cap; 0 trains on every point.
    pub max_points_per_centroid: usize,
}

impl KMeansParams {
    pub fn new(n_centroids: usize, seed: u64) -> Self {
        Self {
            n_centroids,
            iterations: 25,
            seed,
            max_points_per_centroid: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub d: usize,
    pub centroids: Vec<f32>,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
}

impl KMeans {
    pub fn n_centroids(&self) -> usize {
        self.centroids.len() / self.d.max(1)
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.d..(c + 1) * self.d]
    }

    /// Nearest centroid (squared L2) for every row of `points`.
    pub fn assign(&self, points: &[f32]) -> Vec<u32> {
        nearest_centroids(&self.centroids, self.d, points)
            .into_iter()
            .map(|(c, _)| c)
            .collect()
    }
}

/// Index and squared distance of the nearest centroid for each point. Ties
/// go to the smaller centroid index.
pub fn nearest_centroids(centroids: &[f32], d: usize, points: &[f32]) -> Vec<(u32, f32)> {
    if d == 0 || centroids.is_empty() {
        return vec![(0, 0.0); if d == 0 { 0 } else { points.len() / d }];
    }
    let k = centroids.len() / d;
    if d < GEMM_MIN_DIM {
        return points
            .par_chunks(d * ASSIGN_BLOCK)
            .flat_map_iter(|block| {
                block.chunks_exact(d).map(|p| {
                    let mut best = (0u32, f32::INFINITY);
                    for (j, c) in centroids.chunks_exact(d).enumerate() {
                        let dist = l2_sqr(p, c);
                        if dist < best.1 {
                            best = (j as u32, dist);
                        }
                    }
                    best
                })
            })
            .collect();
    }
    let c_norms: Vec<f32> = centroids.chunks_exact(d).map(|c| dot(c, c)).collect();
    let cview = ArrayView2::from_shape((k, d), centroids).expect("centroid shape");
    points
        .par_chunks(d * ASSIGN_BLOCK)
        .flat_map_iter(|block| {
            let rows = block.len() / d;
            let x = ArrayView2::from_shape((rows, d), block).expect("block shape");
            let g = x.dot(&cview.t());
            let out: Vec<(u32, f32)> = (0..rows)
                .map(|i| {
                    let row = g.row(i);
                    let mut best = (0u32, f32::INFINITY);
                    for j in 0..k {
                        let v = c_norms[j] - 2.0 * row[j];
                        if v < best.1 {
                            best = (j as u32, v);
                        }
                    }
                    let (p, c) = (&block[i * d..(i + 1) * d], best.0 as usize);
                    (best.0, l2_sqr(p, &centroids[c * d..(c + 1) * d]))
                })
                .collect();
            out.into_iter()
        })
        .collect()
}

fn wcss(points: &[f32], d: usize, centroids: &[f32], assign: &[u32]) -> f64 {
    points
        .chunks_exact(d)
        .zip(assign)
        .map(|(p, &a)| {
            let c = &centroids[a as usize * d..(a as usize + 1) * d];
            p.iter()
                .zip(c)
                .map(|(&x, &y)| {
                    let t = x as f64 - y as f64;
                    t * t
                })
                .sum::<f64>()
        })
        .sum()
}

fn seed_plus_plus(points: &[f32], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = points.len() / d;
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * d..(first + 1) * d]);
    let mut min_d2: Vec<f32> = points.chunks_exact(d).map(|p| l2_sqr(p, &centroids[..d])).collect();
    for _ in 1..k {
        let total: f64 = min_d2.iter().map(|&x| x as f64).sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                r -= w as f64;
                if r < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = &points[pick * d..(pick + 1) * d];
        centroids.extend_from_slice(c);
        for (m, p) in min_d2.iter_mut().zip(points.chunks_exact(d)) {
            let dist = l2_sqr(p, c);
            if dist < *m {
                *m = dist;
            }
        }
    }
    centroids
}

/// Trains `params.n_centroids` centroids on the rows of `data` (row-major,
/// `d` columns). Deterministic for a fixed seed. Empty clusters are repaired
/// by splitting the most populated one.
pub fn train_kmeans(data: &[f32], d: usize, params: &KMeansParams) -> Result<KMeans> {
    if d == 0 || data.len() % d != 0 {
        return invalid("k-means data length must be a positive multiple of d");
    }
    let n = data.len() / d;
    let k = params.n_centroids;
    if k == 0 || k > n {
        return invalid(format!("cannot train {k} centroids on {n} points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cap = k.saturating_mul(params.max_points_per_centroid);
    let sample: Vec<f32>;
    let points: &[f32] = if params.max_points_per_centroid > 0 && n > cap {
        let mut idx = index::sample(&mut rng, n, cap).into_vec();
        idx.sort_unstable();
        sample = idx
            .iter()
            .flat_map(|&i| data[i * d..(i + 1) * d].iter().copied())
            .collect();
        &sample
    } else {
        data
    };
    let n_train = points.len() / d;

    let mut centroids = seed_plus_plus(points, d, k, &mut rng);
    let mut history = Vec::with_capacity(params.iterations);
    let mut assign: Vec<u32> = Vec::new();
    for _ in 0..params.iterations {
        let next: Vec<u32> = nearest_centroids(&centroids, d, points)
            .into_iter()
            .map(|(c, _)| c)
            .collect();
        let stable = next == assign;
        assign = next;
        history.push(wcss(points, d, &centroids, &assign));
        if stable {
            break;
        }

        let mut sums = vec![0f64; k * d];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.chunks_exact(d).zip(&assign) {
            let a = a as usize;
            counts[a] += 1;
            for (s, &x) in sums[a * d..(a + 1) * d].iter_mut().zip(p) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for j in 0..d {
                    centroids[c * d + j] = (sums[c * d + j] * inv) as f32;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let (big, _) = counts
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (i, &cnt)| if cnt > acc.1 { (i, cnt) } else { acc });
            if counts[big] < 2 {
                continue;
            }
            for j in 0..d {
                let x = centroids[big * d + j];
                let e = SPLIT_EPS * (x.abs() + 1.0);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                centroids[c * d + j] = x + sign * e;
                centroids[big * d + j] = x - sign * e;
            }
            counts[c] = counts[big] / 2;
            counts[big] -= counts[c];
        }
    }
    log::debug!("k-means: {k} centroids on {n_train} points, {} rounds", history.len());
    Ok(KMeans {
        d,
        centroids,
        wcss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, Distribution};

    #[test]
    fn exact_points_give_zero_error() {
        let data: Vec<f32> = (0..16).flat_map(|i| [i as f32, (i * i) as f32]).collect();
        let km = train_kmeans(&data, 2, &KMeansParams::new(16, 3)).unwrap();
        assert_eq!(*km.wcss_history.last().unwrap(), 0.0);
    }

    #[test]
    fn wcss_is_non_increasing() {
        let ds = synth_dataset(4000, 8, Distribution::Gaussian, 1).unwrap();
        let mut p = KMeansParams::new(16, 5);
        p.max_points_per_centroid = 0;
        let km = train_kmeans(&ds.data, 8, &p).unwrap();
        for w in km.wcss_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", km.wcss_history);
        }
    }

    #[test]
    fn gemm_and_direct_assignment_agree() {
        let ds = synth_dataset(3000, 32, Distribution::Gaussian, 2).unwrap();
        let km = train_kmeans(&ds.data, 32, &KMeansParams::new(20, 1)).unwrap();
        let fast = nearest_centroids(&km.centroids, 32, &ds.data);
        for (p, &(c, dist)) in ds.data.chunks_exact(32).zip(&fast) {
            let all: Vec<f32> = km.centroids.chunks_exact(32).map(|x| l2_sqr(p, x)).collect();
            let best = all.iter().copied().fold(f32::INFINITY, f32::min);
            // GEMM rounding may pick a near-tie; the chosen one must be within tolerance
            assert!(dist <= best * (1.0 + 1e-4) + 1e-5);
            assert_eq!(dist, all[c as usize]);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let ds = synth_dataset(2000, 16, Distribution::Gaussian, 3).unwrap();
        let p = KMeansParams::new(10, 9);
        assert_eq!(
            train_kmeans(&ds.data, 16, &p).unwrap(),
            train_kmeans(&ds.data, 16, &p).unwrap()
        );
    }

    #[test]
    fn bad_parameters() {
        assert!(train_kmeans(&[1.0, 2.0], 2, &KMeansParams::new(2, 0)).is_err());
        assert!(train_kmeans(&[1.0, 2.0, 3.0], 2, &KMeansParams::new(1, 0)).is_err());
        assert!(train_kmeans(&[1.0, 2.0], 2, &KMeansParams::new(0, 0)).is_err());
    }

    #[test]
    fn duplicate_points_keep_every_centroid() {
        let mut data = vec![0.0f32; 200];
        data.extend((0..10).flat_map(|i| [i as f32 + 5.0, 1.0]));
        let km = train_kmeans(&data, 2, &KMeansParams::new(8, 4)).unwrap();
        assert_eq!(km.n_centroids(), 8);
        assert!(km.centroids.iter().all(|x| x.is_finite()));
    }
}

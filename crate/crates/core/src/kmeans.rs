//! Lloyd's k-means with k-means++ seeding over the rows of a tensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 50,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Tensor,
    pub labels: Vec<usize>,
    pub iterations: usize,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest centroid; ties go low.
pub fn nearest(x: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq(x, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(data: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // remaining points duplicate chosen ones: take any unchosen row
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq(data.row(i), data.row(next)));
        }
    }
    chosen
}

/// k-means on the rows of `data`. An emptied cluster is re-seeded with the
/// point farthest from its current centroid.
pub fn kmeans(data: &Tensor, cfg: &KMeansConfig) -> Result<KMeans> {
    let (n, dim) = data.shape();
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::Config(format!("k = {} must be in 1..={n}", cfg.k)));
    }
    if !data.is_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = plus_plus(data, cfg.k, &mut rng);
    let mut centroids = data.select_rows(&seeds);
    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(data.row(i), &centroids);
            labels[i] = c;
            dist[i] = d;
        }
        let mut sums = Tensor::zeros(cfg.k, dim);
        let mut counts = vec![0usize; cfg.k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, x) in sums.row_mut(labels[i]).iter_mut().zip(data.row(i)) {
                *s += x;
            }
        }
        for c in 0..cfg.k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("some cluster has two members");
                counts[labels[far]] -= 1;
                for (s, x) in sums.row_mut(labels[far]).iter_mut().zip(data.row(far)) {
                    *s -= x;
                }
                labels[far] = c;
                dist[far] = 0.0;
                counts[c] = 1;
                sums.row_mut(c).copy_from_slice(data.row(far));
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..cfg.k {
            let inv = 1.0 / counts[c] as f64;
            let mean: Vec<f64> = sums.row(c).iter().map(|s| s * inv).collect();
            shift = shift.max(sq(&mean, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&mean);
        }
        if shift < cfg.tol {
            break;
        }
    }
    for (i, l) in labels.iter_mut().enumerate() {
        *l = nearest(data.row(i), &centroids).0;
    }
    Ok(KMeans {
        centroids,
        labels,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Tensor {
        let mut rows = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            rows.push(vec![e, -e]);
            rows.push(vec![5.0 + e, 5.0 - e]);
        }
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn separates_two_blobs() {
        let km = kmeans(&blobs(), &KMeansConfig::new(2, 1)).unwrap();
        let a = km.labels[0];
        for (i, &l) in km.labels.iter().enumerate() {
            assert_eq!(l == a, i % 2 == 0);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let d = blobs();
        let a = kmeans(&d, &KMeansConfig::new(3, 9)).unwrap();
        let b = kmeans(&d, &KMeansConfig::new(3, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_equals_n_uses_every_point() {
        let d = blobs();
        let km = kmeans(&d, &KMeansConfig::new(d.rows(), 0)).unwrap();
        let mut l = km.labels.clone();
        l.sort_unstable();
        assert_eq!(l, (0..d.rows()).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_k() {
        assert!(kmeans(&blobs(), &KMeansConfig::new(0, 0)).is_err());
        assert!(kmeans(&blobs(), &KMeansConfig::new(21, 0)).is_err());
    }
}

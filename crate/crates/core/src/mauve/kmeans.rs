//! Lloyd's k-means with k-means++ seeding, single-threaded and seeded.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig { k, seed, max_iter: 50, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k` centroids, each of the input dimension.
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Number of bitwise-distinct points, counting at most `cap`.
pub fn distinct_points(points: &[Vec<f64>], cap: usize) -> usize {
    let mut seen = HashSet::new();
    for p in points {
        // +0.0 and -0.0 are the same location
        let key: Vec<u64> = p.iter().map(|v| (v + 0.0).to_bits()).collect();
        seen.insert(key);
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // fewer distinct points than k; callers reduce k before this
            rng.random_range(0..points.len())
        };
        let c = points[next].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` (all of equal dimension, at least `k` of them).
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> KMeans {
    assert!(cfg.k >= 1 && cfg.k <= points.len(), "need 1 <= k <= number of points");
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = seed_plus_plus(points, cfg.k, &mut rng);
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..cfg.k {
            // empty clusters keep their previous centroid
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            let updated: Vec<f64> = sums[j].iter().map(|s| s * inv).collect();
            shift = shift.max(sq_dist(&updated, &centroids[j]).sqrt());
            centroids[j] = updated;
        }
        assignments = points.iter().map(|p| nearest(p, &centroids)).collect();
        if shift < cfg.tol {
            break;
        }
    }
    KMeans { centroids, assignments, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..20 {
            let e = (i as f64) * 0.01;
            pts.push(vec![-10.0 + e, e]);
            pts.push(vec![10.0 - e, -e]);
        }
        let km = kmeans(&pts, &KMeansConfig::new(2, 3));
        for pair in km.assignments.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        let left = km.assignments[0];
        assert!(km.assignments.iter().step_by(2).all(|&a| a == left));
    }

    #[test]
    fn every_point_own_cluster_when_k_equals_n() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = kmeans(&pts, &KMeansConfig::new(6, 11));
        let mut a = km.assignments.clone();
        a.sort_unstable();
        a.dedup();
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn deterministic_given_seed() {
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos(), i as f64 * 0.01])
            .collect();
        let a = kmeans(&pts, &KMeansConfig::new(5, 42));
        let b = kmeans(&pts, &KMeansConfig::new(5, 42));
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_counting() {
        let pts = vec![vec![0.0, 1.0], vec![-0.0, 1.0], vec![2.0, 1.0]];
        assert_eq!(distinct_points(&pts, 10), 2);
        assert_eq!(distinct_points(&pts, 1), 1);
    }
}

//! Lloyd's algorithm with seeded k-means++ initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Cluster index per input point, aligned with the input order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Total squared distance to the assigned centroid after each iteration.
    pub distortion_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn distortion(&self) -> f64 {
        self.distortion_history.last().copied().unwrap_or(0.0)
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn init_plus_plus<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].as_ref().to_vec());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p.as_ref(), &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            // Floating-point slack can leave `chosen` on a zero-weight tail.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|w| *w > 0.0).expect("total > 0");
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` into `k` groups. Deterministic for a given seed.
///
/// Iterates until no assignment changes or `max_iters` is reached. An empty
/// cluster is repaired by moving into it the point farthest from its current
/// centroid (taken from a cluster with at least two members).
pub fn kmeans<P: AsRef<[f64]>>(
    points: &[P],
    k: usize,
    rng_seed: u64,
    max_iters: usize,
) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::argument(format!(
            "k-means needs 1 <= k <= {n} points, got k={k}"
        )));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::argument("points have mixed dimensions"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut centroids = init_plus_plus(points, k, &mut rng);
    let mut assignments: Vec<usize> = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;

        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p.as_ref(), &centroids);
            let current = assignments[i];
            // Keep the current cluster on ties so assignments cannot cycle.
            let keep = current != usize::MAX && sq_dist(p.as_ref(), &centroids[current]) <= d;
            if !keep && c != current {
                assignments[i] = c;
                changed = true;
            }
        }

        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let donor = (0..n)
                .filter(|&i| sizes[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(points[a].as_ref(), &centroids[assignments[a]]);
                    let db = sq_dist(points[b].as_ref(), &centroids[assignments[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("k <= n guarantees a cluster with two members");
            sizes[assignments[donor]] -= 1;
            sizes[empty] += 1;
            assignments[donor] = empty;
            centroids[empty] = points[donor].as_ref().to_vec();
            changed = true;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        for (i, p) in points.iter().enumerate() {
            for (s, x) in sums[assignments[i]].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            let count = sizes[c] as f64;
            centroids[c] = sum.into_iter().map(|s| s / count).collect();
        }

        let distortion: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p.as_ref(), &centroids[a]))
            .sum();
        history.push(distortion);

        if !changed {
            break;
        }
    }

    Ok(KMeansResult {
        assignments,
        centroids,
        distortion_history: history,
        iterations,
    })
}

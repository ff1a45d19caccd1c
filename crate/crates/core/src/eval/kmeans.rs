//! Lloyd's k-means with greedy k-means++ seeding, used as a baseline.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub k: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { k: 4, n_init: 10, max_iter: 300, tol: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<i64>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ndarray::ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Greedy k-means++: each new center is the best of `2 + ln k` candidates
/// drawn proportionally to squared distance.
fn seed_centers(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (n, p) = points.dim();
    let trials = 2 + (k as f64).ln() as usize;
    let mut centers = Array2::zeros((k, p));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let (mut pick, mut pick_closest, mut pick_pot) = (0, Vec::new(), f64::INFINITY);
        for _ in 0..trials {
            let cand = if total > 0.0 {
                let mut r = rng.random::<f64>() * total;
                let mut idx = n - 1;
                for (i, &d) in closest.iter().enumerate() {
                    r -= d;
                    if r < 0.0 {
                        idx = i;
                        break;
                    }
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> =
                (0..n).map(|i| closest[i].min(sq_dist(points.row(i), points.row(cand)))).collect();
            let pot: f64 = updated.iter().sum();
            if pot < pick_pot {
                (pick, pick_closest, pick_pot) = (cand, updated, pot);
            }
        }
        centers.row_mut(c).assign(&points.row(pick));
        closest = pick_closest;
    }
    centers
}

fn lloyd(points: ArrayView2<f64>, params: &KMeansParams, seed: u64) -> KMeansResult {
    let (n, p) = points.dim();
    let k = params.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centers(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..params.max_iter {
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centroids);
            labels[i] = c;
            inertia += d;
        }
        history.push(inertia);

        let mut sums = Array2::<f64>::zeros((k, p));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            sums.row_mut(labels[i]).scaled_add(1.0, &points.row(i));
            counts[labels[i]] += 1;
        }
        let mut next = centroids.clone();
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // re-seed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.row(a), centroids.row(labels[a]));
                        let db = sq_dist(points.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                taken[far] = true;
                next.row_mut(c).assign(&points.row(far));
            }
        }
        let shift: f64 = (0..k).map(|c| sq_dist(next.row(c), centroids.row(c))).sum();
        centroids = next;
        if shift <= params.tol * params.tol {
            break;
        }
    }
    let mut inertia = 0.0;
    for i in 0..n {
        let (c, d) = nearest(points.row(i), &centroids);
        labels[i] = c;
        inertia += d;
    }
    if history.last() != Some(&inertia) {
        history.push(inertia);
    }
    KMeansResult { labels: labels.into_iter().map(|l| l as i64).collect(), centroids, inertia, inertia_history: history }
}

/// Best of `n_init` restarts by final inertia. Restart `r` uses a seed
/// derived from `params.seed` and `r`, so results do not depend on thread
/// count.
pub fn kmeans(points: ArrayView2<f64>, params: &KMeansParams) -> Result<KMeansResult, MetricError> {
    let n = points.nrows();
    if params.k == 0 || params.k > n {
        return Err(MetricError::BadK { k: params.k, n });
    }
    let runs: Vec<KMeansResult> = (0..params.n_init.max(1) as u64)
        .into_par_iter()
        .map(|r| lloyd(points, params, params.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r)))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(best)
}

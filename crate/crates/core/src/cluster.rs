//! DBSCAN on 2D layouts and a k-distance heuristic for its radius.

use std::collections::{HashMap, VecDeque};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::ClusterError;
use crate::graph::build_knn;

pub const NOISE: i64 = -1;
pub const DEFAULT_MIN_PTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster id per point, `-1` for noise; ids are dense from 0.
    pub labels: Vec<i64>,
    pub eps: f64,
    pub min_pts: usize,
    pub k_found: usize,
}

impl ClusterResult {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k_found];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Uniform grid with cell side `eps` over 2D points.
struct Grid<'a> {
    points: ArrayView2<'a, f64>,
    eps: f64,
    eps2: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: ArrayView2<'a, f64>, eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for i in 0..points.nrows() {
            cells.entry(Self::key_of(points[[i, 0]], points[[i, 1]], eps)).or_default().push(i);
        }
        Self { points, eps, eps2: eps * eps, cells }
    }

    fn key_of(x: f64, y: f64, eps: f64) -> (i64, i64) {
        ((x / eps).floor() as i64, (y / eps).floor() as i64)
    }

    /// Visits every point within `eps` of point `i`, including `i` itself.
    fn for_each_neighbor(&self, i: usize, mut f: impl FnMut(usize)) {
        let (x, y) = (self.points[[i, 0]], self.points[[i, 1]]);
        let (cx, cy) = Self::key_of(x, y, self.eps);
        for gx in cx.saturating_sub(1)..=cx.saturating_add(1) {
            for gy in cy.saturating_sub(1)..=cy.saturating_add(1) {
                let Some(members) = self.cells.get(&(gx, gy)) else { continue };
                for &j in members {
                    let dx = self.points[[j, 0]] - x;
                    let dy = self.points[[j, 1]] - y;
                    if dx * dx + dy * dy <= self.eps2 {
                        f(j);
                    }
                }
            }
        }
    }
}

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters grow from core points in
/// ascending index order; a border point joins the first cluster to reach it.
pub fn dbscan(coords: ArrayView2<f64>, eps: f64, min_pts: usize) -> Result<ClusterResult, ClusterError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ClusterError::BadEps(eps));
    }
    if min_pts < 1 {
        return Err(ClusterError::BadMinPts);
    }
    let n = coords.nrows();
    let grid = Grid::new(coords, eps);
    let core: Vec<bool> = (0..n)
        .map(|i| {
            let mut count = 0;
            grid.for_each_neighbor(i, |_| count += 1);
            count >= min_pts
        })
        .collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0i64;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed] != NOISE {
            continue;
        }
        labels[seed] = next;
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            grid.for_each_neighbor(p, |q| {
                if labels[q] == NOISE {
                    labels[q] = next;
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            });
        }
        next += 1;
    }
    Ok(ClusterResult { labels, eps, min_pts, k_found: next as usize })
}

/// Sorted-descending distances to each point's `min_pts`-th nearest other point.
pub fn k_distance_curve(coords: ArrayView2<f64>, min_pts: usize) -> Result<Vec<f64>, ClusterError> {
    let n = coords.nrows();
    if min_pts < 1 {
        return Err(ClusterError::BadMinPts);
    }
    if n <= min_pts {
        return Err(ClusterError::TooFewPoints { n, min_pts });
    }
    let knn = build_knn(coords, min_pts).map_err(|_| ClusterError::TooFewPoints { n, min_pts })?;
    let mut curve: Vec<f64> = (0..n).map(|i| knn.distances(i)[min_pts - 1]).collect();
    curve.sort_by(|a, b| b.total_cmp(a));
    Ok(curve)
}

fn median_of_sorted(desc: &[f64]) -> f64 {
    let m = desc.len();
    if m % 2 == 1 {
        desc[m / 2]
    } else {
        0.5 * (desc[m / 2 - 1] + desc[m / 2])
    }
}

/// Radius at the point of maximum discrete curvature of the k-distance
/// curve; the median k-distance when the curve has no bend.
pub fn suggest_eps(coords: ArrayView2<f64>, min_pts: usize) -> Result<f64, ClusterError> {
    let curve = k_distance_curve(coords, min_pts)?;
    Ok(knee(&curve))
}

/// Knee of a descending curve by the largest second difference.
pub fn knee(desc: &[f64]) -> f64 {
    if desc.len() < 3 {
        return median_of_sorted(desc);
    }
    let flat_tol = 1e-12 * desc[0].abs().max(f64::MIN_POSITIVE);
    let (mut best, mut at) = (f64::NEG_INFINITY, 0);
    for i in 1..desc.len() - 1 {
        let dd = desc[i - 1] - 2.0 * desc[i] + desc[i + 1];
        if dd > best {
            best = dd;
            at = i;
        }
    }
    if best <= flat_tol {
        median_of_sorted(desc)
    } else {
        desc[at]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn two_tight_triads() {
        let pts = array![[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [100.0, 0.0], [100.5, 0.0], [100.0, 0.5]];
        let r = dbscan(pts.view(), 1.0, 2).unwrap();
        assert_eq!(r.labels, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(r.k_found, 2);
        assert_eq!(r.noise_count(), 0);
    }

    #[test]
    fn tiny_eps_makes_everything_noise() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0]];
        let r = dbscan(pts.view(), 0.5, 2).unwrap();
        assert!(r.labels.iter().all(|&l| l == NOISE));
        assert_eq!(r.k_found, 0);
    }

    #[test]
    fn min_pts_one_gives_connected_components() {
        let pts = array![[0.0, 0.0], [0.9, 0.0], [1.8, 0.0], [10.0, 0.0], [20.0, 0.0]];
        let r = dbscan(pts.view(), 1.0, 1).unwrap();
        assert_eq!(r.labels, vec![0, 0, 0, 1, 2]);
        assert_eq!(r.noise_count(), 0);
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // point 4 is a border point reachable from both clusters
        let xs = [0.0, 0.1, 0.2, 0.3, 1.25, 2.2, 2.3, 2.4, 2.5];
        let pts = Array2::from_shape_fn((9, 2), |(i, c)| if c == 0 { xs[i] } else { 0.0 });
        let r = dbscan(pts.view(), 1.0, 4).unwrap();
        assert_eq!(r.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn non_positive_eps_is_rejected() {
        let pts = array![[0.0, 0.0]];
        assert!(matches!(dbscan(pts.view(), 0.0, 2), Err(ClusterError::BadEps(_))));
        assert!(matches!(dbscan(pts.view(), -1.0, 2), Err(ClusterError::BadEps(_))));
    }

    #[test]
    fn grid_suggestion_is_within_two_steps() {
        let step = 0.7;
        let pts = Array2::from_shape_fn((400, 2), |(i, c)| if c == 0 { (i % 20) as f64 * step } else { (i / 20) as f64 * step });
        let eps = suggest_eps(pts.view(), 5).unwrap();
        assert!(eps >= step - 1e-12 && eps <= 2.0 * step + 1e-12, "{eps}");
    }

    #[test]
    fn gap_suggestion_stays_below_gap() {
        let mut pts = Array2::zeros((200, 2));
        for i in 0..200 {
            let off = if i < 100 { 0.0 } else { 50.0 };
            pts[[i, 0]] = off + (i % 10) as f64 * 0.3;
            pts[[i, 1]] = ((i % 100) / 10) as f64 * 0.3;
        }
        let eps = suggest_eps(pts.view(), 5).unwrap();
        assert!(eps < 50.0 - 2.7, "{eps}");
    }

    #[test]
    fn minimal_curve_is_returned_as_is() {
        let pts = array![[0.0, 0.0], [3.0, 4.0]];
        assert_eq!(suggest_eps(pts.view(), 1).unwrap(), 5.0);
        assert!(matches!(suggest_eps(pts.view(), 2), Err(ClusterError::TooFewPoints { .. })));
    }

    #[test]
    fn flat_curve_returns_median() {
        assert_eq!(knee(&[2.0, 2.0, 2.0, 2.0]), 2.0);
        assert_eq!(knee(&[4.0, 3.0, 2.0, 1.0]), 2.5);
        assert_eq!(knee(&[10.0, 1.0, 0.9, 0.8]), 1.0);
    }
}

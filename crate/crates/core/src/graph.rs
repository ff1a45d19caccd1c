//! Exact k-nearest-neighbour graph and its fuzzy symmetrization.

use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;

pub const DEFAULT_N_NEIGHBORS: usize = 15;
pub const SMOOTH_K_TOLERANCE: f64 = 1e-5;
pub const SMOOTH_K_MAX_ITER: usize = 64;
pub const MIN_SIGMA_SCALE: f64 = 1e-3;
pub const MAX_SIGMA_SCALE: f64 = 1e3;
pub const EDGE_EPS: f64 = 1e-4;

/// The `k` nearest other points for every point, ascending by distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    k: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_points(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

#[inline]
pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact Euclidean kNN by full scan. Ties are broken toward the smaller index.
pub fn build_knn(points: ArrayView2<f64>, k: usize) -> Result<NeighborGraph, GraphError> {
    let n = points.nrows();
    if k == 0 || k >= n {
        return Err(GraphError::BadNeighborCount { k, n });
    }
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = points.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean(pi, points.row(j)), j))
                .collect();
            let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_key);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_key);
            cand.into_iter().map(|(d, j)| (j, d)).unzip()
        })
        .collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for (idx, dist) in rows {
        indices.extend(idx);
        distances.extend(dist);
    }
    Ok(NeighborGraph { k, indices, distances })
}

/// Result of the bandwidth search for a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaFit {
    pub sigma: f64,
    pub clamped: bool,
}

/// Sum of memberships exp(-max(0, d - rho) / sigma).
pub fn membership_sum(distances: &[f64], rho: f64, sigma: f64) -> f64 {
    distances.iter().map(|d| (-(d - rho).max(0.0) / sigma).exp()).sum()
}

/// Finds sigma with `membership_sum(distances, rho, sigma) == target` by
/// bisection on a log scale over `[sigma_min, sigma_max]`. When the target
/// lies outside the attainable range the nearer bound is returned and the
/// fit is flagged as clamped.
pub fn smooth_knn_sigma(
    distances: &[f64],
    rho: f64,
    target: f64,
    tol: f64,
    max_iter: usize,
    bounds: (f64, f64),
) -> Result<SigmaFit, GraphError> {
    if distances.is_empty() {
        return Err(GraphError::EmptyDistances);
    }
    let (lo_bound, hi_bound) = bounds;
    let f = |s: f64| membership_sum(distances, rho, s) - target;
    if f(lo_bound) >= 0.0 {
        return Ok(SigmaFit { sigma: lo_bound, clamped: f(lo_bound) > tol });
    }
    if f(hi_bound) <= 0.0 {
        return Ok(SigmaFit { sigma: hi_bound, clamped: f(hi_bound) < -tol });
    }
    let (mut lo, mut hi) = (lo_bound.ln(), hi_bound.ln());
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..max_iter {
        mid = 0.5 * (lo + hi);
        let r = f(mid.exp());
        if r.abs() < tol {
            break;
        }
        if r > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SigmaFit { sigma: mid.exp(), clamped: false })
}

/// Fuzzy union `a + b - ab` of two directed memberships, evaluated as
/// `1 - (1 - a)(1 - b)` so that a unit membership stays exactly 1.
#[inline]
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    1.0 - (1.0 - a) * (1.0 - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub p: f64,
}

/// Undirected fuzzy neighbour graph; each pair is stored once with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
    rho: Vec<f64>,
    sigma: Vec<f64>,
}

impl WeightedGraph {
    /// Graph from explicit edges, without bandwidth bookkeeping. Pairs are
    /// canonicalized to `i < j`.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|(i, j, p)| Edge { i: i.min(j), j: i.max(j), p })
            .collect();
        edges.sort_by_key(|e| (e.i, e.j));
        Self { n, edges, rho: vec![0.0; n], sigma: vec![1.0; n] }
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (i.min(j), i.max(j));
        self.edges
            .binary_search_by(|e| (e.i, e.j).cmp(&(a, b)))
            .ok()
            .map(|pos| self.edges[pos].p)
    }

    /// Sorted neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

fn sigma_bounds(mean: f64, fallback: f64) -> (f64, f64) {
    let scale = if mean > 0.0 {
        mean
    } else if fallback > 0.0 {
        fallback
    } else {
        1.0
    };
    (MIN_SIGMA_SCALE * scale, MAX_SIGMA_SCALE * scale)
}

/// Per-point `(rho, sigma)` with local connectivity 1 and target `log2(k)`.
pub fn calibrate(g: &NeighborGraph) -> (Vec<f64>, Vec<f64>) {
    let n = g.n_points();
    let target = (g.k() as f64).log2();
    let global_mean = g.distances.iter().sum::<f64>() / g.distances.len() as f64;
    (0..n)
        .map(|i| {
            let d = g.distances(i);
            let rho = d[0];
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let bounds = sigma_bounds(mean, global_mean);
            let sigma = if target > 0.0 {
                smooth_knn_sigma(d, rho, target, SMOOTH_K_TOLERANCE, SMOOTH_K_MAX_ITER, bounds)
                    .map(|fit| fit.sigma)
                    .unwrap_or(bounds.0)
            } else {
                bounds.0
            };
            (rho, sigma)
        })
        .unzip()
}

/// Symmetrizes with the default edge threshold [`EDGE_EPS`].
pub fn fuzzy_symmetrize(g: &NeighborGraph) -> WeightedGraph {
    fuzzy_symmetrize_with(g, EDGE_EPS)
}

/// Directed memberships `v(i->j) = exp(-max(0, d_ij - rho_i) / sigma_i)`
/// combined by fuzzy union; pairs with weight below `edge_eps` are dropped.
pub fn fuzzy_symmetrize_with(g: &NeighborGraph, edge_eps: f64) -> WeightedGraph {
    let n = g.n_points();
    let (rho, sigma) = calibrate(g);
    let mut pairs: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for i in 0..n {
        for (&j, &d) in g.indices(i).iter().zip(g.distances(i)) {
            let v = (-(d - rho[i]).max(0.0) / sigma[i]).exp();
            let entry = pairs.entry((i.min(j), i.max(j))).or_insert((0.0, 0.0));
            if i < j {
                entry.0 = v;
            } else {
                entry.1 = v;
            }
        }
    }
    let edges = pairs
        .into_iter()
        .map(|((i, j), (a, b))| Edge { i, j, p: fuzzy_union(a, b) })
        .filter(|e| e.p >= edge_eps && e.p > 0.0)
        .collect();
    WeightedGraph { n, edges, rho, sigma }
}

/// kNN plus symmetrization in one call.
pub fn build_graph(points: ArrayView2<f64>, k: usize) -> Result<WeightedGraph, GraphError> {
    Ok(fuzzy_symmetrize(&build_knn(points, k)?))
}

//! Leading non-trivial eigenvectors of the normalized graph Laplacian by
//! block subspace iteration.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::graph::WeightedGraph;

const BLOCK: usize = 4;
const MAX_ITER: usize = 3000;
const TOL: f64 = 1e-6;

struct NormalizedAdjacency<'a> {
    graph: &'a WeightedGraph,
    dinv_sqrt: Vec<f64>,
}

impl NormalizedAdjacency<'_> {
    /// `out = x/2 + D^-1/2 W D^-1/2 x / 2`, whose spectrum lies in [0, 1].
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 0.5 * v;
        }
        for e in self.graph.edges() {
            let w = 0.5 * e.p * self.dinv_sqrt[e.i] * self.dinv_sqrt[e.j];
            out[e.i] += w * x[e.j];
            out[e.j] += w * x[e.i];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormalizes `vs` in place against `fixed` and each other (modified
/// Gram-Schmidt, two passes). Returns false if a vector collapses.
fn orthonormalize(vs: &mut [Vec<f64>], fixed: &[f64]) -> bool {
    for k in 0..vs.len() {
        for _ in 0..2 {
            let c = dot(&vs[k], fixed);
            vs[k].iter_mut().zip(fixed).for_each(|(v, f)| *v -= c * f);
            for m in 0..k {
                let (head, tail) = vs.split_at_mut(k);
                let c = dot(&tail[0], &head[m]);
                tail[0].iter_mut().zip(&head[m]).for_each(|(v, f)| *v -= c * f);
            }
        }
        let norm = dot(&vs[k], &vs[k]).sqrt();
        if !(norm > 1e-300) {
            return false;
        }
        vs[k].iter_mut().for_each(|v| *v /= norm);
    }
    true
}

/// Two eigenvectors of the symmetric normalized Laplacian with the smallest
/// eigenvalues after the trivial `D^1/2 1`, as an `n x 2` matrix. `None` if
/// the graph has isolated points, fewer than three points, or the iteration
/// does not converge.
pub fn laplacian_eigenmap(graph: &WeightedGraph, rng: &mut impl Rng) -> Option<Array2<f64>> {
    let n = graph.n_points();
    if n < 3 {
        return None;
    }
    let mut degree = vec![0.0; n];
    for e in graph.edges() {
        degree[e.i] += e.p;
        degree[e.j] += e.p;
    }
    if degree.iter().any(|d| !(*d > 0.0)) {
        return None;
    }
    let op = NormalizedAdjacency { graph, dinv_sqrt: degree.iter().map(|d| 1.0 / d.sqrt()).collect() };
    let total: f64 = degree.iter().sum();
    let trivial: Vec<f64> = degree.iter().map(|d| (d / total).sqrt()).collect();

    let block = BLOCK.min(n - 1);
    let mut basis: Vec<Vec<f64>> =
        (0..block).map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    if !orthonormalize(&mut basis, &trivial) {
        return None;
    }
    let mut image = vec![vec![0.0; n]; block];
    for _ in 0..MAX_ITER {
        for (v, w) in basis.iter().zip(image.iter_mut()) {
            op.apply(v, w);
        }
        // Rayleigh-Ritz on the current block
        let h = DMatrix::from_fn(block, block, |r, c| dot(&basis[r], &image[c]));
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        let rotate = |src: &[Vec<f64>]| -> Vec<Vec<f64>> {
            order
                .iter()
                .map(|&c| {
                    let mut out = vec![0.0; n];
                    for (r, s) in src.iter().enumerate() {
                        let coef = eig.eigenvectors[(r, c)];
                        out.iter_mut().zip(s).for_each(|(o, v)| *o += coef * v);
                    }
                    out
                })
                .collect()
        };
        let ritz = rotate(&basis);
        let ritz_image = rotate(&image);
        let converged = (0..2.min(block)).all(|k| {
            let theta = eig.eigenvalues[order[k]];
            let res: f64 = ritz_image[k].iter().zip(&ritz[k]).map(|(w, v)| (w - theta * v).powi(2)).sum();
            res.sqrt() < TOL
        });
        if converged && block >= 2 {
            let mut out = Array2::zeros((n, 2));
            for k in 0..2 {
                let pivot = ritz[k].iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                for i in 0..n {
                    out[[i, k]] = sign * ritz[k][i];
                }
            }
            return Some(out);
        }
        basis = ritz_image;
        if !orthonormalize(&mut basis, &trivial) {
            return None;
        }
    }
    None
}

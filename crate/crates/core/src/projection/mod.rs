//! 2D layout by stochastic gradient descent on the cross-entropy between
//! high-dimensional memberships and a low-dimensional kernel, with optional
//! pair-constraint penalties.

mod curve;
mod spectral;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use curve::{fit_curve, target_curve, DEFAULT_CURVE};
pub use spectral::laplacian_eigenmap;

use crate::constraints::{constraint_gradient, total_loss, ConstraintSet, LossBreakdown};
use crate::error::ProjectionError;
use crate::graph::WeightedGraph;

pub const Q_EPS: f64 = 1e-12;
pub const MAX_STEP: f64 = 4.0;
pub const FRAME_INTERVAL: usize = 5;
pub const DEFAULT_EPOCHS: usize = 200;
pub const WARM_EPOCHS: usize = 50;
pub const WARM_LR_FACTOR: f64 = 0.1;
pub const INIT_EXTENT: f64 = 10.0;

/// Low-dimensional similarity `1 / (1 + a d^(2b))`.
#[inline]
pub fn q_similarity(yi: ArrayView1<f64>, yj: ArrayView1<f64>, a: f64, b: f64) -> f64 {
    let d2: f64 = yi.iter().zip(yj.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    q_from_sq(d2, a, b)
}

#[inline]
fn q_from_sq(d2: f64, a: f64, b: f64) -> f64 {
    if d2 == 0.0 {
        1.0
    } else {
        1.0 / (1.0 + a * d2.powf(b))
    }
}

/// Layout coordinates plus the state needed to continue optimizing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingState {
    pub coords: Array2<f64>,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub curve_a: f64,
    pub curve_b: f64,
}

impl EmbeddingState {
    pub fn n_points(&self) -> usize {
        self.coords.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    pub epochs: usize,
    pub initial_lr: f64,
    pub negative_samples: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub seed: u64,
    pub warm_epochs: usize,
    pub warm_lr_factor: f64,
    pub frame_interval: usize,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            initial_lr: 1.0,
            negative_samples: 5,
            min_dist: 0.1,
            spread: 1.0,
            seed: 0,
            warm_epochs: WARM_EPOCHS,
            warm_lr_factor: WARM_LR_FACTOR,
            frame_interval: FRAME_INTERVAL,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |m: &str| Err(ProjectionError::BadParams(m.to_string()));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if self.negative_samples < 1 {
            return bad("negative_samples must be at least 1");
        }
        if !(self.min_dist > 0.0 && self.min_dist < self.spread) {
            return bad("need 0 < min_dist < spread");
        }
        if !(self.warm_lr_factor > 0.0 && self.warm_lr_factor.is_finite()) {
            return bad("warm_lr_factor must be positive");
        }
        if self.frame_interval < 1 {
            return bad("frame_interval must be at least 1");
        }
        Ok(())
    }

    /// Schedule used after a feedback round.
    pub fn warm(&self) -> Self {
        Self { epochs: self.warm_epochs, initial_lr: self.initial_lr * self.warm_lr_factor, ..self.clone() }
    }

    /// Kernel parameters, falling back to [`DEFAULT_CURVE`] if the fit fails.
    pub fn curve(&self) -> (f64, f64) {
        fit_curve(self.min_dist, self.spread).unwrap_or_else(|err| {
            tracing::warn!(%err, "kernel fit failed, using default curve");
            DEFAULT_CURVE
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Random,
    #[default]
    Spectral,
}

/// Which initializer actually produced the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitReport {
    pub method: InitMethod,
    pub fell_back: bool,
}

fn rescale_columns(coords: &mut Array2<f64>) {
    for mut col in coords.columns_mut() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        col.mapv_inplace(|v| if span > 0.0 { (v - lo) / span * 2.0 * INIT_EXTENT - INIT_EXTENT } else { 0.0 });
    }
}

/// Initial layout in `[-10, 10]^2`. Spectral initialization falls back to a
/// uniform random layout when the eigen-solver gives up.
pub fn init_layout(
    g: &WeightedGraph,
    method: InitMethod,
    seed: u64,
    curve: (f64, f64),
) -> Result<(EmbeddingState, InitReport), ProjectionError> {
    let n = g.n_points();
    if n == 0 {
        return Err(ProjectionError::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectral = match method {
        InitMethod::Spectral => laplacian_eigenmap(g, &mut rng),
        InitMethod::Random => None,
    };
    let used = if spectral.is_some() { InitMethod::Spectral } else { InitMethod::Random };
    let fell_back = method == InitMethod::Spectral && spectral.is_none();
    if fell_back {
        tracing::warn!("spectral initialization failed, using random layout");
    }
    let coords = match spectral {
        Some(mut c) => {
            rescale_columns(&mut c);
            c
        }
        None => Array2::from_shape_fn((n, 2), |_| rng.random_range(-INIT_EXTENT..=INIT_EXTENT)),
    };
    let state = EmbeddingState { coords, epoch: 0, rng, curve_a: curve.0, curve_b: curve.1 };
    Ok((state, InitReport { method: used, fell_back }))
}

/// Cross-entropy between edge memberships `p` and kernel values `q`, with `q`
/// clamped to `[Q_EPS, 1 - Q_EPS]`.
pub fn umap_loss(coords: ArrayView2<f64>, g: &WeightedGraph, a: f64, b: f64) -> f64 {
    let xlogy = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
    g.edges()
        .iter()
        .map(|e| {
            let q = q_similarity(coords.row(e.i), coords.row(e.j), a, b).clamp(Q_EPS, 1.0 - Q_EPS);
            let p = e.p;
            xlogy(p, p / q) + xlogy(1.0 - p, (1.0 - p) / (1.0 - q))
        })
        .sum()
}

/// Exact full-batch gradient of [`umap_loss`] (no clamping, no sampling).
pub fn umap_gradient(coords: ArrayView2<f64>, g: &WeightedGraph, a: f64, b: f64) -> Array2<f64> {
    let mut grad = Array2::zeros(coords.raw_dim());
    for e in g.edges() {
        let dx = coords[[e.i, 0]] - coords[[e.j, 0]];
        let dy = coords[[e.i, 1]] - coords[[e.j, 1]];
        let s = dx * dx + dy * dy;
        if s == 0.0 {
            continue;
        }
        let q = q_from_sq(s, a, b);
        let dl_dq = -e.p / q + (1.0 - e.p) / (1.0 - q);
        let dq_ds = -a * b * s.powf(b - 1.0) * q * q;
        let c = dl_dq * dq_ds * 2.0;
        grad[[e.i, 0]] += c * dx;
        grad[[e.i, 1]] += c * dy;
        grad[[e.j, 0]] -= c * dx;
        grad[[e.j, 1]] -= c * dy;
    }
    grad
}

/// Immutable snapshot handed to frame consumers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frame {
    pub epoch: usize,
    pub coords: Array2<f64>,
    pub loss: LossBreakdown,
}

/// Cooperative cancellation flag, checked at epoch boundaries.
#[derive(Debug, Clone, Default)]
pub struct StopToken(Arc<AtomicBool>);

impl StopToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(-MAX_STEP, MAX_STEP)
}

fn check_inputs(e: &EmbeddingState, g: &WeightedGraph, cs: &ConstraintSet) -> Result<(), ProjectionError> {
    let n = e.n_points();
    if g.n_points() != n {
        return Err(ProjectionError::ShapeMismatch { expected: g.n_points(), found: n });
    }
    if let Some(index) = cs.max_index() {
        if index >= n {
            return Err(ProjectionError::ConstraintIndex { index, n });
        }
    }
    Ok(())
}

fn snapshot(e: &EmbeddingState, g: &WeightedGraph, cs: &ConstraintSet) -> Frame {
    Frame { epoch: e.epoch, coords: e.coords.clone(), loss: total_loss(e.coords.view(), g, cs, e.curve_a, e.curve_b) }
}

/// Runs `p.epochs` SGD sweeps. Each sweep visits every edge once with an
/// attractive update and `negative_samples` repulsive updates (all scaled by
/// the edge weight), then takes one full-batch step on the constraint
/// penalties. The learning rate decays linearly to zero. A frame is emitted
/// at the start, every `frame_interval` epochs and at the end; on
/// cancellation the state at the last completed epoch is returned.
pub fn optimize(
    mut e: EmbeddingState,
    g: &WeightedGraph,
    cs: &ConstraintSet,
    p: &OptimizerParams,
    on_frame: &mut dyn FnMut(&Frame),
    stop: &StopToken,
) -> Result<EmbeddingState, ProjectionError> {
    p.validate()?;
    check_inputs(&e, g, cs)?;
    let n = e.n_points();
    let (a, b) = (e.curve_a, e.curve_b);
    let adjacency = g.adjacency();
    let start = e.epoch;
    let mut last_frame = start;
    on_frame(&snapshot(&e, g, cs));

    for t in 0..p.epochs {
        if stop.is_cancelled() {
            break;
        }
        let lr = p.initial_lr * (1.0 - t as f64 / p.epochs as f64);
        let y = &mut e.coords;
        for edge in g.edges() {
            let (i, j) = (edge.i, edge.j);
            let dx = y[[i, 0]] - y[[j, 0]];
            let dy = y[[i, 1]] - y[[j, 1]];
            let d2 = dx * dx + dy * dy;
            if d2 > 0.0 {
                let c = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                let (gx, gy) = (clip(c * dx) * lr * edge.p, clip(c * dy) * lr * edge.p);
                y[[i, 0]] += gx;
                y[[i, 1]] += gy;
                y[[j, 0]] -= gx;
                y[[j, 1]] -= gy;
            }
            for _ in 0..p.negative_samples {
                let k = e.rng.random_range(0..n);
                if k == i || adjacency[i].binary_search(&k).is_ok() {
                    continue;
                }
                let dx = y[[i, 0]] - y[[k, 0]];
                let dy = y[[i, 1]] - y[[k, 1]];
                let d2 = dx * dx + dy * dy;
                let (gx, gy) = if d2 > 0.0 {
                    let c = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
                    (clip(c * dx), clip(c * dy))
                } else {
                    (MAX_STEP, MAX_STEP)
                };
                y[[i, 0]] += gx * lr * edge.p;
                y[[i, 1]] += gy * lr * edge.p;
            }
        }
        if !cs.is_empty() {
            let grad = constraint_gradient(y.view(), cs);
            y.zip_mut_with(&grad, |v, gr| *v -= lr * clip(*gr));
        }
        e.epoch += 1;
        if let Some(point) = (0..n).find(|&i| !(y[[i, 0]].is_finite() && y[[i, 1]].is_finite())) {
            return Err(ProjectionError::NonFinite { point, epoch: e.epoch });
        }
        if (t + 1) % p.frame_interval == 0 {
            on_frame(&snapshot(&e, g, cs));
            last_frame = e.epoch;
        }
    }
    if last_frame != e.epoch {
        on_frame(&snapshot(&e, g, cs));
    }
    Ok(e)
}

/// Continues optimization from `e` with the warm schedule of `p`.
pub fn warm_restart(
    e: EmbeddingState,
    g: &WeightedGraph,
    cs: &ConstraintSet,
    p: &OptimizerParams,
    on_frame: &mut dyn FnMut(&Frame),
    stop: &StopToken,
) -> Result<EmbeddingState, ProjectionError> {
    optimize(e, g, cs, &p.warm(), on_frame, stop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{constraint_loss, Constraint};
    use ndarray::array;

    fn no_frames() -> impl FnMut(&Frame) {
        |_| {}
    }

    fn state(coords: Array2<f64>) -> EmbeddingState {
        EmbeddingState { coords, epoch: 0, rng: ChaCha8Rng::seed_from_u64(0), curve_a: 1.577, curve_b: 0.895 }
    }

    #[test]
    fn kernel_values() {
        let o = array![0.0, 0.0];
        assert_eq!(q_similarity(o.view(), o.view(), 1.577, 0.895), 1.0);
        assert_eq!(q_similarity(o.view(), array![1.0, 0.0].view(), 1.0, 1.0), 0.5);
        // 1 / (1 + 1.577 * 2^1.79)
        let want = 1.0 / (1.0 + 1.577 * 2f64.powf(2.0 * 0.895));
        let got = q_similarity(o.view(), array![0.0, 2.0].view(), 1.577, 0.895);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.154_955).abs() < 1e-6, "{got}");
    }

    #[test]
    fn loss_special_cases() {
        let coords = array![[0.0, 0.0], [1.0, 0.0]];
        let g = WeightedGraph::from_edges(2, [(0, 1, 1.0)]);
        // q = 0.5 for a = b = 1
        assert!((umap_loss(coords.view(), &g, 1.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        let g = WeightedGraph::from_edges(2, [(0, 1, 0.5)]);
        assert!(umap_loss(coords.view(), &g, 1.0, 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_point_loss_matches_hand_sum() {
        let coords = array![[0.0, 0.0], [1.0, 1.0], [3.0, 0.0]];
        let g = WeightedGraph::from_edges(3, [(0, 1, 0.9), (1, 2, 0.3), (0, 2, 1.0)]);
        // a = b = 1: q = 1 / (1 + d^2) with d^2 = 2, 5, 9
        let term = |p: f64, q: f64| {
            let second = if p < 1.0 { (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln() } else { 0.0 };
            p * (p / q).ln() + second
        };
        let want = term(0.9, 1.0 / 3.0) + term(0.3, 1.0 / 6.0) + term(1.0, 0.1);
        assert!((umap_loss(coords.view(), &g, 1.0, 1.0) - want).abs() < 1e-12);
    }

    #[test]
    fn random_init_is_deterministic_and_bounded() {
        let g = WeightedGraph::from_edges(50, (0..49).map(|i| (i, i + 1, 1.0)));
        let (s1, r) = init_layout(&g, InitMethod::Random, 9, DEFAULT_CURVE).unwrap();
        let (s2, _) = init_layout(&g, InitMethod::Random, 9, DEFAULT_CURVE).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(r, InitReport { method: InitMethod::Random, fell_back: false });
        assert!(s1.coords.iter().all(|v| v.abs() <= INIT_EXTENT));
    }

    #[test]
    fn spectral_init_separates_disconnected_cliques() {
        let mut edges = Vec::new();
        for base in [0, 6] {
            for i in 0..6 {
                for j in i + 1..6 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
        }
        let g = WeightedGraph::from_edges(12, edges);
        let (s, r) = init_layout(&g, InitMethod::Spectral, 3, DEFAULT_CURVE).unwrap();
        assert!(!r.fell_back);
        assert!(s.coords.iter().all(|v| v.abs() <= INIT_EXTENT + 1e-9));
        let first: Vec<f64> = s.coords.column(0).to_vec();
        let (lo, hi) = first.split_at(6);
        let separated = lo.iter().all(|a| hi.iter().all(|b| a < b)) || lo.iter().all(|a| hi.iter().all(|b| a > b));
        assert!(separated, "{first:?}");
    }

    #[test]
    fn spectral_falls_back_on_isolated_points() {
        let g = WeightedGraph::from_edges(5, [(0, 1, 1.0)]);
        let (_, r) = init_layout(&g, InitMethod::Spectral, 0, DEFAULT_CURVE).unwrap();
        assert_eq!(r, InitReport { method: InitMethod::Random, fell_back: true });
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let g = WeightedGraph::from_edges(3, [(0, 1, 1.0)]);
        let s = state(array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]);
        let p = OptimizerParams { epochs: 0, ..OptimizerParams::default() };
        let out = optimize(s.clone(), &g, &ConstraintSet::new(3), &p, &mut no_frames(), &StopToken::new()).unwrap();
        assert_eq!(out.coords, s.coords);
        let warm = OptimizerParams { warm_epochs: 0, ..OptimizerParams::default() };
        let out = warm_restart(s.clone(), &g, &ConstraintSet::new(3), &warm, &mut no_frames(), &StopToken::new()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn must_link_distance_shrinks_every_epoch() {
        let g = WeightedGraph::from_edges(2, []);
        let mut cs = ConstraintSet::with_params(2, 1.0, 0.5, 0.0);
        cs.add(Constraint::must_link(0, 1)).unwrap();
        let p = OptimizerParams { epochs: 1, initial_lr: 0.05, ..OptimizerParams::default() };
        let mut s = state(array![[0.0, 0.0], [3.0, 1.0]]);
        let dist = |s: &EmbeddingState| constraint_loss(s.coords.view(), &cs).ml.sqrt();
        for _ in 0..30 {
            let before = dist(&s);
            s = optimize(s, &g, &cs, &p, &mut no_frames(), &StopToken::new()).unwrap();
            assert!(dist(&s) < before);
        }
    }

    #[test]
    fn coincident_cannot_link_separates_after_warm_restart() {
        let g = WeightedGraph::from_edges(3, [(0, 2, 1.0)]);
        let mut cs = ConstraintSet::new(3);
        cs.add(Constraint::cannot_link(0, 1)).unwrap();
        let s = state(array![[1.0, 1.0], [1.0, 1.0], [4.0, 4.0]]);
        let out = warm_restart(s, &g, &cs, &OptimizerParams::default(), &mut no_frames(), &StopToken::new()).unwrap();
        assert_eq!(out.n_points(), 3);
        assert!(constraint_loss(out.coords.view(), &cs).cl < 1.0);
    }

    #[test]
    fn frames_are_finite_and_increasing() {
        let g = WeightedGraph::from_edges(6, (0..5).map(|i| (i, i + 1, 0.8)));
        let s = state(Array2::from_shape_fn((6, 2), |(i, c)| (i * 2 + c) as f64));
        let p = OptimizerParams { epochs: 23, ..OptimizerParams::default() };
        let mut epochs = Vec::new();
        let mut cb = |f: &Frame| {
            assert!(f.coords.iter().all(|v| v.is_finite()));
            epochs.push(f.epoch);
        };
        optimize(s, &g, &ConstraintSet::new(6), &p, &mut cb, &StopToken::new()).unwrap();
        assert_eq!(epochs, vec![0, 5, 10, 15, 20, 23]);
    }

    #[test]
    fn cancellation_stops_at_epoch_boundary() {
        let g = WeightedGraph::from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)]);
        let s = state(array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0]]);
        let stop = StopToken::new();
        let p = OptimizerParams { epochs: 100, frame_interval: 1, ..OptimizerParams::default() };
        let token = stop.clone();
        let mut cb = move |f: &Frame| {
            if f.epoch == 7 {
                token.cancel();
            }
        };
        let out = optimize(s, &g, &ConstraintSet::new(4), &p, &mut cb, &stop).unwrap();
        assert_eq!(out.epoch, 7);
    }

    #[test]
    fn out_of_range_constraint_is_rejected() {
        let g = WeightedGraph::from_edges(2, [(0, 1, 1.0)]);
        let mut cs = ConstraintSet::new(10);
        cs.add(Constraint::must_link(0, 9)).unwrap();
        let s = state(array![[0.0, 0.0], [1.0, 0.0]]);
        let err = optimize(s, &g, &cs, &OptimizerParams::default(), &mut no_frames(), &StopToken::new());
        assert!(matches!(err, Err(ProjectionError::ConstraintIndex { index: 9, n: 2 })));
    }

    #[test]
    fn cannot_link_pushes_blobs_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut coords = Array2::zeros((20, 2));
        let mut edges = Vec::new();
        for i in 0..20 {
            let cx = if i < 10 { 0.0 } else { 1.5 };
            coords[[i, 0]] = cx + rng.random_range(-0.5..0.5);
            coords[[i, 1]] = rng.random_range(-0.5..0.5);
            for j in i + 1..20 {
                if (i < 10) == (j < 10) {
                    edges.push((i, j, 1.0));
                }
            }
        }
        let g = WeightedGraph::from_edges(20, edges);
        let mean_gap = |c: &Array2<f64>| {
            let mut s = 0.0;
            for i in 0..10 {
                for j in 10..20 {
                    s += ((c[[i, 0]] - c[[j, 0]]).powi(2) + (c[[i, 1]] - c[[j, 1]]).powi(2)).sqrt();
                }
            }
            s / 100.0
        };
        let p = OptimizerParams { epochs: 30, initial_lr: 0.1, ..OptimizerParams::default() };
        let s = state(coords.clone());
        let free = optimize(s.clone(), &g, &ConstraintSet::new(20), &p, &mut no_frames(), &StopToken::new()).unwrap();
        let mut cs = ConstraintSet::with_params(20, 5.0, 0.1, 1.0);
        cs.add(Constraint::cannot_link(0, 10)).unwrap();
        let pushed = optimize(s, &g, &cs, &p, &mut no_frames(), &StopToken::new()).unwrap();
        assert!(mean_gap(&pushed.coords) >= mean_gap(&coords));
        assert!(mean_gap(&pushed.coords) >= mean_gap(&free.coords));
    }

    #[test]
    fn zero_lambda_trajectory_ignores_constraints() {
        let g = WeightedGraph::from_edges(8, (0..7).map(|i| (i, i + 1, 0.9)));
        let s = state(Array2::from_shape_fn((8, 2), |(i, c)| ((i * 7 + c * 3) % 5) as f64));
        let p = OptimizerParams { epochs: 40, ..OptimizerParams::default() };
        let empty = ConstraintSet::with_params(8, 1.0, 0.0, 0.0);
        let mut full = empty.clone();
        full.add(Constraint::must_link(0, 7)).unwrap();
        full.add(Constraint::cannot_link(1, 2)).unwrap();
        let a = optimize(s.clone(), &g, &empty, &p, &mut no_frames(), &StopToken::new()).unwrap();
        let b = optimize(s, &g, &full, &p, &mut no_frames(), &StopToken::new()).unwrap();
        assert_eq!(a.coords, b.coords);
    }
}

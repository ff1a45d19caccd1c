//! Simulated user: samples constraints from ground truth and drives the
//! project / feedback / restart / cluster loop.

use std::collections::HashSet;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{dbscan, suggest_eps, ClusterResult, DEFAULT_MIN_PTS};
use crate::constraints::{
    Constraint, ConstraintSet, LossBreakdown, DEFAULT_LAMBDA_CL, DEFAULT_LAMBDA_ML, DEFAULT_MARGIN,
};
use crate::data::Dataset;
use crate::error::{OracleError, Result};
use crate::eval::MetricReport;
use crate::explain::{explain_all, ExplainParams, Explanation};
use crate::graph::{build_graph, WeightedGraph, DEFAULT_N_NEIGHBORS};
use crate::projection::{init_layout, optimize, warm_restart, EmbeddingState, InitMethod, OptimizerParams, StopToken};

/// Above this many candidate pairs the sampler draws a random subset instead
/// of enumerating every pair.
pub const MAX_ENUMERATED_PAIRS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform over eligible pairs.
    Random,
    /// Same-label pairs that are far apart and different-label pairs that are
    /// close, i.e. the mistakes visible in the current layout.
    #[default]
    ErrorDriven,
}

/// Splitmix64 finalizer, used to derive independent stage seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn dist(coords: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    let dx = coords[[i, 0]] - coords[[j, 0]];
    let dy = coords[[i, 1]] - coords[[j, 1]];
    (dx * dx + dy * dy).sqrt()
}

/// Candidate pairs `(i, j)` with `i < j`, excluding already constrained ones.
fn candidate_pairs(n: usize, existing: &ConstraintSet, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    if total <= MAX_ENUMERATED_PAIRS {
        let mut out = Vec::with_capacity(total);
        for i in 0..n {
            for j in i + 1..n {
                if !existing.contains_pair(i, j) {
                    out.push((i, j));
                }
            }
        }
        return out;
    }
    let mut seen = HashSet::with_capacity(MAX_ENUMERATED_PAIRS);
    let mut out = Vec::with_capacity(MAX_ENUMERATED_PAIRS);
    // bounded attempts keep this terminating even if most pairs are taken
    for _ in 0..4 * MAX_ENUMERATED_PAIRS {
        if out.len() == MAX_ENUMERATED_PAIRS {
            break;
        }
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let pair = (i.min(j), i.max(j));
        if i != j && !existing.contains_pair(pair.0, pair.1) && seen.insert(pair) {
            out.push(pair);
        }
    }
    out.sort_unstable();
    out
}

fn count_pairs(labels: &[usize], existing: &ConstraintSet, same: bool) -> usize {
    let mut sizes = std::collections::HashMap::<usize, usize>::new();
    for &l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    let n = labels.len();
    let within: usize = sizes.values().map(|&c| c * c.saturating_sub(1) / 2).sum();
    let pool = if same { within } else { n * n.saturating_sub(1) / 2 - within };
    let taken = existing.iter().filter(|c| (labels[c.i] == labels[c.j]) == same).count();
    pool - taken
}

fn pick(
    mut pool: Vec<(usize, usize)>,
    want: usize,
    strategy: Strategy,
    coords: &ArrayView2<f64>,
    far_first: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    if want == 0 {
        return Vec::new();
    }
    if strategy == Strategy::ErrorDriven {
        let key = |&(i, j): &(usize, usize)| dist(coords, i, j);
        pool.sort_by(|a, b| {
            let ord = key(a).total_cmp(&key(b));
            (if far_first { ord.reverse() } else { ord }).then(a.cmp(b))
        });
        let decile = pool.len().div_ceil(10).max(want).min(pool.len());
        pool.truncate(decile);
    }
    let mut chosen: Vec<(usize, usize)> = sample(rng, pool.len(), want.min(pool.len())).into_iter().map(|k| pool[k]).collect();
    chosen.sort_unstable();
    chosen
}

/// Draws `n_ml` must-link and `n_cl` cannot-link pairs consistent with
/// `labels`, never repeating a pair already in `existing`.
pub fn sample_feedback(
    labels: &[usize],
    coords: ArrayView2<f64>,
    n_ml: usize,
    n_cl: usize,
    strategy: Strategy,
    existing: &ConstraintSet,
    seed: u64,
) -> Result<Vec<Constraint>, OracleError> {
    let n = labels.len();
    if coords.nrows() != n {
        return Err(OracleError::LengthMismatch { labels: n, coords: coords.nrows() });
    }
    if n_cl > 0 && labels.iter().all(|&l| l == labels[0]) {
        return Err(OracleError::SingleClass);
    }
    let available_ml = count_pairs(labels, existing, true);
    if n_ml > available_ml {
        return Err(OracleError::NotEnoughPairs { kind: "must_link", requested: n_ml, available: available_ml });
    }
    let available_cl = count_pairs(labels, existing, false);
    if n_cl > available_cl {
        return Err(OracleError::NotEnoughPairs { kind: "cannot_link", requested: n_cl, available: available_cl });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (same, different): (Vec<_>, Vec<_>) =
        candidate_pairs(n, existing, &mut rng).into_iter().partition(|&(i, j)| labels[i] == labels[j]);
    let ml = pick(same, n_ml, strategy, &coords, true, &mut rng);
    let cl = pick(different, n_cl, strategy, &coords, false, &mut rng);
    if ml.len() < n_ml || cl.len() < n_cl {
        // only reachable when the random subset missed the few eligible pairs
        let (kind, requested, found) =
            if ml.len() < n_ml { ("must_link", n_ml, ml.len()) } else { ("cannot_link", n_cl, cl.len()) };
        return Err(OracleError::NotEnoughPairs { kind, requested, available: found });
    }
    Ok(ml
        .into_iter()
        .map(|(i, j)| Constraint::must_link(i, j))
        .chain(cl.into_iter().map(|(i, j)| Constraint::cannot_link(i, j)))
        .collect())
}

/// Every knob of the non-interactive loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub n_neighbors: usize,
    pub init: InitMethod,
    pub optimizer: OptimizerParams,
    pub margin: f64,
    pub lambda_ml: f64,
    pub lambda_cl: f64,
    pub min_pts: usize,
    /// Fixed DBSCAN radius; suggested from the layout each round when absent.
    pub eps: Option<f64>,
    pub n_ml: usize,
    pub n_cl: usize,
    pub strategy: Strategy,
    pub explain: ExplainParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            n_neighbors: DEFAULT_N_NEIGHBORS,
            init: InitMethod::default(),
            optimizer: OptimizerParams::default(),
            margin: DEFAULT_MARGIN,
            lambda_ml: DEFAULT_LAMBDA_ML,
            lambda_cl: DEFAULT_LAMBDA_CL,
            min_pts: DEFAULT_MIN_PTS,
            eps: None,
            n_ml: 5,
            n_cl: 5,
            strategy: Strategy::default(),
            explain: ExplainParams::default(),
        }
    }
}

impl PipelineParams {
    /// Penalty strength 5, margin 6 and a 200-epoch warm restart at the full
    /// learning rate. With the defaults a handful of pairs per round rarely
    /// moves whole clusters apart; this profile does on overlapping blobs.
    pub fn strong_feedback() -> Self {
        let base = Self::default();
        Self {
            lambda_ml: 5.0,
            lambda_cl: 5.0,
            margin: 6.0,
            optimizer: OptimizerParams { warm_epochs: 200, warm_lr_factor: 1.0, ..base.optimizer.clone() },
            ..base
        }
    }

    pub fn constraint_set(&self, n: usize) -> ConstraintSet {
        ConstraintSet::with_params(n, self.margin, self.lambda_ml, self.lambda_cl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub constraints_added: usize,
    pub must_links: usize,
    pub cannot_links: usize,
    pub loss: LossBreakdown,
    pub metrics: MetricReport,
    pub eps: f64,
    pub k_found: usize,
    pub noise: usize,
    /// Mean must-link pair distance before and after this round's restart.
    pub ml_distance_before: Option<f64>,
    pub ml_distance_after: Option<f64>,
    /// Share of cannot-link pairs at least `0.9 * margin` apart after the restart.
    pub cl_satisfied: Option<f64>,
    /// `None` when no restart ran (round 0, or penalties switched off).
    pub restart_secs: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionReport {
    pub dataset: String,
    pub seed: u64,
    pub strategy: Strategy,
    pub init_fell_back: bool,
    pub rounds: Vec<RoundRecord>,
    pub constraints: Vec<Constraint>,
    pub final_clusters: ClusterResult,
    pub explanations: Vec<Explanation>,
    #[serde(skip)]
    pub final_coords: Array2<f64>,
}

/// Layout, clusters and scores of a pipeline run without feedback.
#[derive(Debug, Clone)]
pub struct StaticRun {
    pub graph: WeightedGraph,
    pub state: EmbeddingState,
    pub init_fell_back: bool,
    pub clusters: ClusterResult,
    pub metrics: MetricReport,
    pub loss: LossBreakdown,
}

pub fn cluster_layout(coords: ArrayView2<f64>, params: &PipelineParams) -> Result<ClusterResult> {
    let eps = match params.eps {
        Some(e) => e,
        None => suggest_eps(coords, params.min_pts)?,
    };
    Ok(dbscan(coords, eps, params.min_pts)?)
}

fn mean_distance<'a>(coords: ArrayView2<f64>, pairs: impl Iterator<Item = &'a Constraint>) -> Option<f64> {
    let (sum, count) = pairs.fold((0.0, 0usize), |(s, c), p| (s + dist(&coords, p.i, p.j), c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn cl_satisfied(coords: ArrayView2<f64>, cs: &ConstraintSet) -> Option<f64> {
    let (ok, count) = cs
        .cannot_links()
        .fold((0usize, 0usize), |(o, c), p| (o + (dist(&coords, p.i, p.j) >= 0.9 * cs.margin) as usize, c + 1));
    (count > 0).then(|| ok as f64 / count as f64)
}

const INIT_STREAM: u64 = 1;
const FEEDBACK_STREAM: u64 = 2;

/// Graph, initial optimization, DBSCAN and metrics. The embedding seed is
/// derived from `seed`; `params.optimizer.seed` is not used.
pub fn static_pipeline(ds: &Dataset, dataset: &str, params: &PipelineParams, seed: u64) -> Result<StaticRun> {
    let graph = build_graph(ds.features().view(), params.n_neighbors)?;
    let curve = params.optimizer.curve();
    let (state, report) = init_layout(&graph, params.init, mix_seed(seed, INIT_STREAM), curve)?;
    let cs = params.constraint_set(ds.n_points());
    let mut last = LossBreakdown::default();
    let state = optimize(state, &graph, &cs, &params.optimizer, &mut |f| last = f.loss, &StopToken::new())?;
    let clusters = cluster_layout(state.coords.view(), params)?;
    let metrics = MetricReport::score("ipbc", dataset, seed, 0, state.coords.view(), &clusters.labels, ds.labels());
    Ok(StaticRun { graph, state, init_fell_back: report.fell_back, clusters, metrics, loss: last })
}

/// Runs the static pipeline and then `rounds` simulated feedback rounds.
/// When the penalties cannot contribute (zero strengths) the restart is
/// skipped, so every round reproduces round 0 exactly.
pub fn run_session(ds: &Dataset, dataset: &str, rounds: usize, params: &PipelineParams, seed: u64) -> Result<SessionReport> {
    let labels = ds.labels().ok_or(OracleError::NoLabels)?;
    let run = static_pipeline(ds, dataset, params, seed)?;
    let StaticRun { graph, mut state, init_fell_back, mut clusters, metrics, loss } = run;
    let mut cs = params.constraint_set(ds.n_points());
    let mut records = vec![RoundRecord {
        round: 0,
        constraints_added: 0,
        must_links: 0,
        cannot_links: 0,
        loss,
        metrics,
        eps: clusters.eps,
        k_found: clusters.k_found,
        noise: clusters.noise_count(),
        ml_distance_before: None,
        ml_distance_after: None,
        cl_satisfied: None,
        restart_secs: None,
    }];

    for round in 1..=rounds {
        let batch = sample_feedback(
            labels,
            state.coords.view(),
            params.n_ml,
            params.n_cl,
            params.strategy,
            &cs,
            mix_seed(seed, FEEDBACK_STREAM + round as u64),
        )?;
        let added = batch.len();
        for c in batch {
            cs.add(c.in_round(round))?;
        }
        let ml_before = mean_distance(state.coords.view(), cs.must_links());
        let mut loss = crate::constraints::total_loss(state.coords.view(), &graph, &cs, state.curve_a, state.curve_b);
        let mut restart_secs = None;
        if cs.is_active() {
            let started = Instant::now();
            state = warm_restart(state, &graph, &cs, &params.optimizer, &mut |f| loss = f.loss, &StopToken::new())?;
            restart_secs = Some(started.elapsed().as_secs_f64());
            clusters = cluster_layout(state.coords.view(), params)?;
        }
        tracing::debug!(round, k_found = clusters.k_found, "feedback round done");
        let metrics =
            MetricReport::score("ipbc", dataset, seed, round, state.coords.view(), &clusters.labels, Some(labels));
        records.push(RoundRecord {
            round,
            constraints_added: added,
            must_links: cs.must_links().count(),
            cannot_links: cs.cannot_links().count(),
            loss,
            metrics,
            eps: clusters.eps,
            k_found: clusters.k_found,
            noise: clusters.noise_count(),
            ml_distance_before: ml_before,
            ml_distance_after: mean_distance(state.coords.view(), cs.must_links()),
            cl_satisfied: cl_satisfied(state.coords.view(), &cs),
            restart_secs,
        });
    }

    let explanations = explain_all(ds, &clusters, &params.explain);
    Ok(SessionReport {
        dataset: dataset.to_string(),
        seed,
        strategy: params.strategy,
        init_fell_back,
        rounds: records,
        constraints: cs.iter().copied().collect(),
        final_clusters: clusters,
        explanations,
        final_coords: state.coords,
    })
}

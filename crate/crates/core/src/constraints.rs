//! Pairwise must-link / cannot-link constraints and their penalty terms.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::ConstraintError;
use crate::graph::WeightedGraph;
use crate::projection::umap_loss;

pub const DEFAULT_MARGIN: f64 = 1.0;
pub const DEFAULT_LAMBDA_ML: f64 = 0.1;
pub const DEFAULT_LAMBDA_CL: f64 = 0.1;

/// Distances below this are treated as coincident for the cannot-link hinge.
const COINCIDENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    MustLink,
    CannotLink,
}

/// A weighted pair constraint, stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    #[serde(default)]
    pub round: usize,
}

impl Constraint {
    pub fn must_link(i: usize, j: usize) -> Self {
        Self { kind: ConstraintKind::MustLink, i, j, weight: 1.0, round: 0 }
    }

    pub fn cannot_link(i: usize, j: usize) -> Self {
        Self { kind: ConstraintKind::CannotLink, i, j, weight: 1.0, round: 0 }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn in_round(mut self, round: usize) -> Self {
        self.round = round;
        self
    }

    pub fn canonical(mut self) -> Self {
        if self.i > self.j {
            std::mem::swap(&mut self.i, &mut self.j);
        }
        self
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.i.min(self.j), self.i.max(self.j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Added,
    /// Same pair and kind already present; the stored weight is kept.
    Duplicate,
}

/// Constraint store plus the margin and strengths of the penalty terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintSet {
    n_points: usize,
    constraints: Vec<Constraint>,
    pub margin: f64,
    pub lambda_ml: f64,
    pub lambda_cl: f64,
    #[serde(skip)]
    index: HashMap<(usize, usize), usize>,
}

impl ConstraintSet {
    pub fn new(n_points: usize) -> Self {
        Self::with_params(n_points, DEFAULT_MARGIN, DEFAULT_LAMBDA_ML, DEFAULT_LAMBDA_CL)
    }

    pub fn with_params(n_points: usize, margin: f64, lambda_ml: f64, lambda_cl: f64) -> Self {
        Self { n_points, constraints: Vec::new(), margin, lambda_ml, lambda_cl, index: HashMap::new() }
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter()
    }

    pub fn must_links(&self) -> impl Iterator<Item = &Constraint> {
        self.iter().filter(|c| c.kind == ConstraintKind::MustLink)
    }

    pub fn cannot_links(&self) -> impl Iterator<Item = &Constraint> {
        self.iter().filter(|c| c.kind == ConstraintKind::CannotLink)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Constraint> {
        self.index.get(&(i.min(j), i.max(j))).map(|&pos| &self.constraints[pos])
    }

    pub fn contains_pair(&self, i: usize, j: usize) -> bool {
        self.index.contains_key(&(i.min(j), i.max(j)))
    }

    /// True when the penalty terms can contribute to the objective.
    pub fn is_active(&self) -> bool {
        (self.lambda_ml != 0.0 && self.must_links().next().is_some())
            || (self.lambda_cl != 0.0 && self.cannot_links().next().is_some())
    }

    pub fn validate(&self, c: &Constraint) -> Result<(), ConstraintError> {
        if c.i == c.j {
            return Err(ConstraintError::SelfPair(c.i));
        }
        for index in [c.i, c.j] {
            if index >= self.n_points {
                return Err(ConstraintError::OutOfRange { index, n: self.n_points });
            }
        }
        if !(c.weight.is_finite() && c.weight > 0.0) {
            return Err(ConstraintError::BadWeight(c.weight));
        }
        Ok(())
    }

    /// Inserts a canonicalized copy of `c`. A pair already present with the
    /// opposite kind is a conflict and leaves the set unchanged.
    pub fn add(&mut self, c: Constraint) -> Result<Insertion, ConstraintError> {
        self.validate(&c)?;
        let c = c.canonical();
        if let Some(existing) = self.get(c.i, c.j) {
            if existing.kind == c.kind {
                return Ok(Insertion::Duplicate);
            }
            return Err(ConstraintError::Conflict { existing: *existing, incoming: c });
        }
        self.index.insert(c.pair(), self.constraints.len());
        self.constraints.push(c);
        Ok(Insertion::Added)
    }

    pub fn remove_pair(&mut self, i: usize, j: usize) -> Option<Constraint> {
        let pos = self.index.remove(&(i.min(j), i.max(j)))?;
        let removed = self.constraints.remove(pos);
        for slot in self.index.values_mut() {
            if *slot > pos {
                *slot -= 1;
            }
        }
        Some(removed)
    }

    /// Largest point index referenced, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.iter().map(|c| c.j.max(c.i)).max()
    }
}

/// Unweighted penalty values: the caller applies the lambdas.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintLoss {
    pub ml: f64,
    pub cl: f64,
}

#[inline]
fn pair_distance(coords: &ArrayView2<f64>, i: usize, j: usize) -> (f64, f64, f64) {
    let dx = coords[[i, 0]] - coords[[j, 0]];
    let dy = coords[[i, 1]] - coords[[j, 1]];
    (dx, dy, (dx * dx + dy * dy).sqrt())
}

/// `ml = sum w |y_i - y_j|^2` over must-links and
/// `cl = sum w max(0, m - |y_k - y_l|)^2` over cannot-links.
pub fn constraint_loss(coords: ArrayView2<f64>, cs: &ConstraintSet) -> ConstraintLoss {
    let mut out = ConstraintLoss::default();
    for c in cs.iter() {
        let (_, _, d) = pair_distance(&coords, c.i, c.j);
        match c.kind {
            ConstraintKind::MustLink => out.ml += c.weight * d * d,
            ConstraintKind::CannotLink => {
                let gap = (cs.margin - d).max(0.0);
                out.cl += c.weight * gap * gap;
            }
        }
    }
    out
}

/// Unit direction used to separate coincident cannot-link points.
pub fn escape_direction(i: usize, j: usize) -> (f64, f64) {
    let mut z = ((i as u64) << 32 ^ j as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let angle = (z >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    (angle.cos(), angle.sin())
}

/// Gradient of `lambda_ml * ml + lambda_cl * cl` with respect to every
/// coordinate. Coincident cannot-link pairs get a repulsion of magnitude
/// `2 lambda_cl w m` along [`escape_direction`].
pub fn constraint_gradient(coords: ArrayView2<f64>, cs: &ConstraintSet) -> Array2<f64> {
    let mut grad = Array2::zeros(coords.raw_dim());
    for c in cs.iter() {
        let (dx, dy, d) = pair_distance(&coords, c.i, c.j);
        let (gx, gy) = match c.kind {
            ConstraintKind::MustLink => {
                let s = 2.0 * cs.lambda_ml * c.weight;
                (s * dx, s * dy)
            }
            ConstraintKind::CannotLink => {
                if d >= cs.margin {
                    continue;
                }
                if d < COINCIDENT {
                    let (ux, uy) = escape_direction(c.i, c.j);
                    let s = 2.0 * cs.lambda_cl * c.weight * cs.margin;
                    (-s * ux, -s * uy)
                } else {
                    let s = -2.0 * cs.lambda_cl * c.weight * (cs.margin - d) / d;
                    (s * dx, s * dy)
                }
            }
        };
        grad[[c.i, 0]] += gx;
        grad[[c.i, 1]] += gy;
        grad[[c.j, 0]] -= gx;
        grad[[c.j, 1]] -= gy;
    }
    grad
}

/// Components of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub umap: f64,
    pub ml: f64,
    pub cl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(umap: f64, penalties: ConstraintLoss, cs: &ConstraintSet) -> Self {
        Self {
            umap,
            ml: penalties.ml,
            cl: penalties.cl,
            total: umap + cs.lambda_ml * penalties.ml + cs.lambda_cl * penalties.cl,
        }
    }
}

/// `umap + lambda_ml * ml + lambda_cl * cl` for the given layout.
pub fn total_loss(coords: ArrayView2<f64>, g: &WeightedGraph, cs: &ConstraintSet, a: f64, b: f64) -> LossBreakdown {
    let umap = umap_loss(coords, g, a, b);
    LossBreakdown::compose(umap, constraint_loss(coords, cs), cs)
}

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use ndarray::{Array1, ArrayView2};

use crate::cluster::NOISE;
use crate::error::MetricError;

struct Contingency {
    n: usize,
    cells: Vec<usize>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn dense_codes<T: Hash + Eq + Copy>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut codes = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = codes.len();
            *codes.entry(*l).or_insert(next)
        })
        .collect();
    (out, codes.len())
}

fn contingency<A: Hash + Eq + Copy, B: Hash + Eq + Copy>(a: &[A], b: &[B]) -> Result<Contingency, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let (ca, ka) = dense_codes(a);
    let (cb, kb) = dense_codes(b);
    // ordered so that floating-point sums are reproducible
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (x, y) in ca.iter().zip(&cb) {
        *table.entry((*x, *y)).or_default() += 1;
    }
    let mut rows = vec![0; ka];
    let mut cols = vec![0; kb];
    for (&(x, y), &c) in &table {
        rows[x] += c;
        cols[y] += c;
    }
    Ok(Contingency { n: a.len(), cells: table.into_values().collect(), rows, cols })
}

#[inline]
fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn ari<A: Hash + Eq + Copy, B: Hash + Eq + Copy>(a: &[A], b: &[B]) -> Result<f64, MetricError> {
    let t = contingency(a, b)?;
    if t.n < 2 {
        return Err(MetricError::TooFewPoints { needed: 2, found: t.n });
    }
    let index: f64 = t.cells.iter().map(|&c| comb2(c)).sum();
    let sum_a: f64 = t.rows.iter().map(|&c| comb2(c)).sum();
    let sum_b: f64 = t.cols.iter().map(|&c| comb2(c)).sum();
    let expected = sum_a * sum_b / comb2(t.n);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both partitions are all-singletons or a single cluster
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, `I(a; b) / sqrt(H(a) H(b))`.
pub fn nmi<A: Hash + Eq + Copy, B: Hash + Eq + Copy>(a: &[A], b: &[B]) -> Result<f64, MetricError> {
    let t = contingency(a, b)?;
    if t.n == 0 {
        return Err(MetricError::TooFewPoints { needed: 1, found: 0 });
    }
    // identical partitions: a bijection between row and column labels
    if t.cells.len() == t.rows.len() && t.rows.len() == t.cols.len() {
        return Ok(1.0);
    }
    let n = t.n as f64;
    let (ha, hb) = (entropy(&t.rows, n), entropy(&t.cols, n));
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    // I = H(a) + H(b) - H(a, b)
    let mi = (ha + hb - entropy(&t.cells, n)).max(0.0);
    Ok((mi / (ha * hb).sqrt()).min(1.0))
}

fn dist(points: &ArrayView2<f64>, i: usize, j: usize) -> f64 {
    points.row(i).iter().zip(points.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Non-noise points grouped by dense cluster code.
fn groups(labels: &[i64]) -> Vec<Vec<usize>> {
    let mut codes: HashMap<i64, usize> = HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == NOISE {
            continue;
        }
        let next = codes.len();
        let c = *codes.entry(l).or_insert(next);
        if c == out.len() {
            out.push(Vec::new());
        }
        out[c].push(i);
    }
    out
}

/// Mean silhouette over non-noise points. Members of singleton clusters
/// score 0, as do points whose intra and nearest-cluster distances are both
/// zero.
pub fn silhouette(points: ArrayView2<f64>, labels: &[i64]) -> Result<f64, MetricError> {
    if points.nrows() != labels.len() {
        return Err(MetricError::LengthMismatch(points.nrows(), labels.len()));
    }
    let groups = groups(labels);
    if groups.len() < 2 {
        return Err(MetricError::TooFewClusters(groups.len()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            count += 1;
            if members.len() == 1 {
                continue;
            }
            let a = members.iter().filter(|&&j| j != i).map(|&j| dist(&points, i, j)).sum::<f64>()
                / (members.len() - 1) as f64;
            let b = groups
                .iter()
                .enumerate()
                .filter(|(h, _)| *h != g)
                .map(|(_, other)| other.iter().map(|&j| dist(&points, i, j)).sum::<f64>() / other.len() as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                total += (b - a) / denom;
            }
        }
    }
    Ok(total / count as f64)
}

/// Davies-Bouldin index over non-noise clusters; `+inf` when two centroids
/// coincide.
pub fn davies_bouldin(points: ArrayView2<f64>, labels: &[i64]) -> Result<f64, MetricError> {
    if points.nrows() != labels.len() {
        return Err(MetricError::LengthMismatch(points.nrows(), labels.len()));
    }
    let groups = groups(labels);
    if groups.len() < 2 {
        return Err(MetricError::TooFewClusters(groups.len()));
    }
    let p = points.ncols();
    let centroids: Vec<Array1<f64>> = groups
        .iter()
        .map(|m| {
            let mut c = Array1::zeros(p);
            for &i in m {
                c += &points.row(i);
            }
            c / m.len() as f64
        })
        .collect();
    let scatter: Vec<f64> = groups
        .iter()
        .zip(&centroids)
        .map(|(m, c)| {
            m.iter().map(|&i| (&points.row(i) - c).mapv(|v| v * v).sum().sqrt()).sum::<f64>() / m.len() as f64
        })
        .collect();
    let k = groups.len();
    let mut sum = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = (&centroids[i] - &centroids[j]).mapv(|v| v * v).sum().sqrt();
            if d == 0.0 {
                return Ok(f64::INFINITY);
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        sum += worst;
    }
    Ok(sum / k as f64)
}

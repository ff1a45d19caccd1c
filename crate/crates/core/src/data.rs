//! Dataset ingestion, synthetic blob generation and standardization.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Stable identifier of a point, independent of its row position.
pub type PointId = u64;

/// An n x d feature matrix with optional integer ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    feature_names: Vec<String>,
    point_ids: Vec<PointId>,
}

impl Dataset {
    /// Builds a dataset, validating shape, finiteness and name uniqueness.
    /// Point ids default to row indices.
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        feature_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let n = features.nrows();
        let point_ids = (0..n as PointId).collect();
        Self::with_ids(features, labels, feature_names, point_ids)
    }

    pub fn with_ids(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        feature_names: Vec<String>,
        point_ids: Vec<PointId>,
    ) -> Result<Self, DataError> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(DataError::Empty("dataset has no rows"));
        }
        if d == 0 {
            return Err(DataError::Empty("dataset has no feature columns"));
        }
        if feature_names.len() != d {
            return Err(DataError::Invalid(format!(
                "{} feature names for {d} columns",
                feature_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateFeature(name.clone()));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(DataError::Invalid(format!("{} labels for {n} rows", labels.len())));
            }
        }
        if point_ids.len() != n {
            return Err(DataError::Invalid(format!("{} point ids for {n} rows", point_ids.len())));
        }
        let mut ids = HashSet::with_capacity(n);
        if !point_ids.iter().all(|id| ids.insert(*id)) {
            return Err(DataError::Invalid("point ids are not unique".into()));
        }
        for ((row, col), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(DataError::NonFinite { row, column: feature_names[col].clone() });
            }
        }
        Ok(Self { features, labels, feature_names, point_ids })
    }

    pub fn n_points(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn point_ids(&self) -> &[PointId] {
        &self.point_ids
    }

    /// Number of distinct ground-truth classes, if labels are present.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().collect::<HashSet<_>>().len())
    }

    /// Map from stable point id to row index.
    pub fn id_index(&self) -> HashMap<PointId, usize> {
        self.point_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect()
    }
}

/// Reads a CSV file. See [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_csv(file, label_column)
}

/// Parses a header-first CSV. The named label column, if any, is removed from
/// the features and its distinct values are mapped to dense integers in order
/// of first appearance.
pub fn read_csv(reader: impl Read, label_column: Option<&str>) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|_| DataError::MissingHeader)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(DataError::MissingHeader);
    }
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingLabelColumn(name.to_string()))?,
        ),
        None => None,
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(c, _)| Some(*c) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let d = feature_names.len();

    let mut values = Vec::new();
    let mut label_codes: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut n = 0usize;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Invalid(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(DataError::Ragged { row, expected: header.len(), found: record.len() });
        }
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(col) == label_idx {
                let next = label_codes.len();
                labels.push(*label_codes.entry(cell.to_string()).or_insert(next));
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                row,
                column: header[col].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row, column: header[col].clone() });
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(DataError::Empty("csv has no data rows"));
    }
    let features = Array2::from_shape_vec((n, d), values)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(features, label_idx.map(|_| labels), feature_names)
}

/// Rounds to 9 significant digits and prints the shortest decimal that
/// reproduces the rounded value.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

/// Writes the dataset as CSV; labels, if present, go in a trailing `label` column.
pub fn write_csv(ds: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    let mut header = ds.feature_names.join(",");
    if ds.labels.is_some() {
        header.push_str(",label");
    }
    writeln!(out, "{header}")?;
    for (i, row) in ds.features.rows().into_iter().enumerate() {
        let mut line: Vec<String> = row.iter().map(|v| format_sig9(*v)).collect();
        if let Some(labels) = &ds.labels {
            line.push(labels[i].to_string());
        }
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let io_err = |source| DataError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(ds, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Parameters of the Gaussian blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobSpec {
    pub n_per_cluster: usize,
    pub d: usize,
    pub k: usize,
    pub centers_separation: f64,
    pub noise_scale: f64,
    pub overlap_pair: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            n_per_cluster: 100,
            d: 10,
            k: 4,
            centers_separation: 10.0,
            noise_scale: 1.0,
            overlap_pair: None,
            seed: 0,
        }
    }
}

/// Places `k` centers so every pair sits `sep` apart, except `overlap` which
/// sits `sep / 2` apart. The distance matrix is realized by classical
/// multidimensional scaling, which is exact whenever `d >= k - 1`; for smaller
/// `d` the leading `d` coordinates are kept.
pub fn blob_centers(k: usize, d: usize, sep: f64, overlap: Option<(usize, usize)>) -> Array2<f64> {
    let mut target = DMatrix::<f64>::from_fn(k, k, |i, j| if i == j { 0.0 } else { sep });
    if let Some((a, b)) = overlap {
        target[(a, b)] = 0.5 * sep;
        target[(b, a)] = 0.5 * sep;
    }
    // Double-centred Gram matrix: B = -1/2 J D^2 J.
    let sq = target.map(|v| v * v);
    let row_means: Vec<f64> = (0..k).map(|i| sq.row(i).mean()).collect();
    let grand = sq.mean();
    let gram = DMatrix::from_fn(k, k, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));

    let mut centers = Array2::zeros((k, d));
    for (axis, &e) in order.iter().take(d).enumerate() {
        let lambda = eig.eigenvalues[e];
        if lambda <= 1e-12 * (1.0 + grand) {
            continue;
        }
        let scale = lambda.sqrt();
        // sign convention: largest-magnitude entry positive
        let col = eig.eigenvectors.column(e);
        let pivot = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for c in 0..k {
            centers[[c, axis]] = sign * col[c] * scale;
        }
    }
    centers
}

/// Gaussian blobs around `k` centers; rows are grouped by generating cluster,
/// which is also the label.
pub fn generate_blobs(spec: &BlobSpec) -> Result<Dataset, DataError> {
    let BlobSpec { n_per_cluster, d, k, centers_separation, noise_scale, overlap_pair, seed } = *spec;
    if k < 1 {
        return Err(DataError::Generator("k must be at least 1".into()));
    }
    if d < 2 {
        return Err(DataError::Generator("d must be at least 2".into()));
    }
    if n_per_cluster < 1 {
        return Err(DataError::Generator("n_per_cluster must be at least 1".into()));
    }
    if !(centers_separation.is_finite() && centers_separation >= 0.0) {
        return Err(DataError::Generator("centers_separation must be finite and >= 0".into()));
    }
    if !(noise_scale.is_finite() && noise_scale >= 0.0) {
        return Err(DataError::Generator("noise_scale must be finite and >= 0".into()));
    }
    if let Some((a, b)) = overlap_pair {
        if a >= k || b >= k {
            return Err(DataError::Generator(format!(
                "overlap pair ({a}, {b}) references a cluster outside 0..{k}"
            )));
        }
        if a == b {
            return Err(DataError::Generator("overlap pair must name two distinct clusters".into()));
        }
    }

    let centers = blob_centers(k, d, centers_separation, overlap_pair);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = n_per_cluster * k;
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (row, mut point) in features.axis_iter_mut(Axis(0)).enumerate() {
        let c = row / n_per_cluster;
        for j in 0..d {
            point[j] = centers[[c, j]] + noise_scale * normal.sample(&mut rng);
        }
        labels.push(c);
    }
    let names = (0..d).map(|j| format!("f{j}")).collect();
    Dataset::new(features, Some(labels), names)
}

/// Per-feature z-scoring with the population standard deviation. Columns
/// whose deviation is zero (up to rounding) become all zeros.
pub fn standardize(ds: &Dataset) -> Result<Dataset, DataError> {
    let n = ds.n_points();
    if n < 2 {
        return Err(DataError::Invalid(format!("standardize needs n >= 2, got {n}")));
    }
    let mut features = ds.features.clone();
    for mut col in features.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let zero = sd <= 64.0 * f64::EPSILON * mean.abs().max(1.0);
        col.mapv_inplace(|v| if zero { 0.0 } else { (v - mean) / sd });
    }
    Dataset::with_ids(features, ds.labels.clone(), ds.feature_names.clone(), ds.point_ids.clone())
}

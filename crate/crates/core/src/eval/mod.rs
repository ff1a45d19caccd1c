//! Clustering quality metrics and the non-interactive baselines.

mod kmeans;
mod metrics;
mod pca;

use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans, KMeansParams, KMeansResult};
pub use metrics::{ari, davies_bouldin, nmi, silhouette};
pub use pca::{pca, PcaResult};

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub round: usize,
    pub ari: Option<f64>,
    pub nmi: Option<f64>,
    pub silhouette: Option<f64>,
    pub davies_bouldin: Option<f64>,
}

impl MetricReport {
    /// Scores a predicted labeling. `points` is the space the clustering was
    /// computed in; noise (`-1`) is dropped for the internal indices but kept
    /// as its own label for the external ones.
    pub fn score(
        method: &str,
        dataset: &str,
        seed: u64,
        round: usize,
        points: ndarray::ArrayView2<f64>,
        predicted: &[i64],
        truth: Option<&[usize]>,
    ) -> Self {
        let (ari, nmi) = match truth {
            Some(t) => (metrics::ari(t, predicted).ok(), metrics::nmi(t, predicted).ok()),
            None => (None, None),
        };
        Self {
            method: method.to_string(),
            dataset: dataset.to_string(),
            seed,
            round,
            ari,
            nmi,
            silhouette: metrics::silhouette(points, predicted).ok(),
            davies_bouldin: metrics::davies_bouldin(points, predicted).ok(),
        }
    }

    pub const CSV_HEADER: &'static str = "method,dataset,seed,round,ari,nmi,silhouette,davies_bouldin";

    /// CSV row matching [`Self::CSV_HEADER`]; absent metrics are blank.
    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| match v {
            Some(x) if x.is_infinite() => if x > 0.0 { "inf".to_string() } else { "-inf".to_string() },
            Some(x) => format!("{x:.6}"),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.dataset,
            self.seed,
            self.round,
            cell(self.ari),
            cell(self.nmi),
            cell(self.silhouette),
            cell(self.davies_bouldin)
        )
    }
}

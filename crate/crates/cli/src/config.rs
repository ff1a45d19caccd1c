//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [dataset]
//! name = "overlap-blobs"
//! blobs = { n_per_cluster = 100, d = 10, k = 4, noise_scale = 1.5, overlap_pair = [0, 1] }
//! # or: csv = "data.csv", label_column = "label"
//!
//! [run]
//! methods = ["kmeans_raw", "kmeans_pca", "static", "ipbc"]
//! seeds = [0, 1, 2]
//!
//! [kmeans]          # shared by both k-means baselines
//! n_init = 10
//!
//! [kmeans_pca]
//! dims = 50         # clamped to min(dims, d, n - 1)
//!
//! [pipeline]        # layout + DBSCAN, shared by static and ipbc
//! lambda_ml = 0.1
//! [pipeline.optimizer]
//! epochs = 200
//!
//! [ipbc]
//! rounds = 3
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ipbc_core::data::BlobSpec;
use ipbc_core::PipelineParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KmeansRaw,
    KmeansPca,
    Static,
    Ipbc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::KmeansRaw, Method::KmeansPca, Method::Static, Method::Ipbc];

    pub fn name(self) -> &'static str {
        match self {
            Method::KmeansRaw => "kmeans_raw",
            Method::KmeansPca => "kmeans_pca",
            Method::Static => "static",
            Method::Ipbc => "ipbc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: Option<String>,
    pub csv: Option<PathBuf>,
    pub label_column: Option<String>,
    pub blobs: Option<BlobSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub methods: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    /// Number of clusters; the number of ground-truth classes when absent.
    pub k: Option<usize>,
    pub n_init: usize,
    pub max_iter: usize,
    /// z-score features before clustering.
    pub standardize: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: None, n_init: 10, max_iter: 300, standardize: true }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub dims: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self { dims: 50 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpbcConfig {
    pub rounds: usize,
}

impl Default for IpbcConfig {
    fn default() -> Self {
        Self { rounds: 3 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dataset: DatasetConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub kmeans: KMeansConfig,
    #[serde(default)]
    pub kmeans_pca: PcaConfig,
    #[serde(default)]
    pub pipeline: PipelineParams,
    #[serde(default)]
    pub ipbc: IpbcConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.methods()?;
        match (&cfg.dataset.csv, &cfg.dataset.blobs) {
            (Some(_), Some(_)) => return Err(CliError::Config("dataset: set only one of `csv` and `blobs`".into())),
            (None, None) => return Err(CliError::Config("dataset: one of `csv` or `blobs` is required".into())),
            _ => {}
        }
        if cfg.run.seeds.is_empty() {
            return Err(CliError::Config("run.seeds: at least one seed is required".into()));
        }
        cfg.pipeline.optimizer.validate().map_err(|e| CliError::Config(format!("pipeline.optimizer: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // CSV paths are relative to the config file
        if let (Some(csv), Some(dir)) = (&cfg.dataset.csv, path.parent()) {
            if csv.is_relative() {
                cfg.dataset.csv = Some(dir.join(csv));
            }
        }
        Ok(cfg)
    }

    /// Methods in the order given, duplicates removed.
    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        let mut out = Vec::new();
        for name in &self.run.methods {
            let m: Method = name.parse().map_err(|bad| {
                CliError::Config(format!(
                    "run.methods: unknown method `{bad}` (expected one of {})",
                    Method::ALL.map(Method::name).join(", ")
                ))
            })?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(CliError::Config("run.methods: at least one method is required".into()));
        }
        Ok(out)
    }

    pub fn dataset_name(&self) -> String {
        if let Some(name) = &self.dataset.name {
            return name.clone();
        }
        match &self.dataset.csv {
            Some(p) => p.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned()),
            None => "blobs".into(),
        }
    }
}

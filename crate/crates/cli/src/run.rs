//! The `run` command: methods × seeds, then report files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ipbc_core::data::{load_csv, standardize};
use ipbc_core::eval::{kmeans, pca, KMeansParams};
use ipbc_core::{generate_blobs, run_session, static_pipeline, Dataset, MetricReport, SessionReport};
use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::config::{Config, Method};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";

struct CellOutput {
    method: Method,
    seed: u64,
    metrics: Vec<MetricReport>,
    /// 2D coordinates for plotting and the predicted labels.
    coords: Array2<f64>,
    predicted: Vec<i64>,
    session: Option<SessionReport>,
}

pub fn load_dataset(cfg: &Config) -> Result<Dataset, CliError> {
    let loaded = match (&cfg.dataset.csv, &cfg.dataset.blobs) {
        (Some(path), _) => load_csv(path, cfg.dataset.label_column.as_deref()),
        (None, Some(spec)) => generate_blobs(spec),
        (None, None) => return Err(CliError::Config("dataset: no source".into())),
    };
    loaded.map_err(|e| CliError::Dataset(e.to_string()))
}

/// First two columns, zero-padded when there is only one.
fn plot_coords(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), 2));
    let w = x.ncols().min(2);
    out.slice_mut(s![.., ..w]).assign(&x.slice(s![.., ..w]));
    out
}

fn kmeans_cell(cfg: &Config, ds: &Dataset, method: Method, seed: u64) -> Result<CellOutput, CliError> {
    let name = cfg.dataset_name();
    let run_err = |e: ipbc_core::Error| CliError::Run(format!("{method} seed {seed}: {e}"));
    let k = match cfg.kmeans.k.or(ds.n_classes()) {
        Some(k) => k,
        None => return Err(CliError::Config("kmeans.k: required when the dataset has no labels".into())),
    };
    let base = if cfg.kmeans.standardize { standardize(ds).map_err(|e| run_err(e.into()))? } else { ds.clone() };
    let x = base.features();
    let (n, d) = x.dim();
    let space = match method {
        Method::KmeansPca => {
            let dims = cfg.kmeans_pca.dims.min(d).min(n.saturating_sub(1)).max(1);
            pca(x.view(), dims).map_err(|e| run_err(e.into()))?.projected
        }
        _ => x.clone(),
    };
    let params = KMeansParams { k, n_init: cfg.kmeans.n_init, max_iter: cfg.kmeans.max_iter, seed, ..Default::default() };
    let result = kmeans(space.view(), &params).map_err(|e| run_err(e.into()))?;
    let metrics = MetricReport::score(method.name(), &name, seed, 0, space.view(), &result.labels, ds.labels());
    let coords = match method {
        Method::KmeansPca => plot_coords(space.view()),
        _ => plot_coords(pca(x.view(), d.min(n).min(2)).map_err(|e| run_err(e.into()))?.projected.view()),
    };
    Ok(CellOutput { method, seed, metrics: vec![metrics], coords, predicted: result.labels, session: None })
}

fn run_cell(cfg: &Config, ds: &Dataset, method: Method, seed: u64) -> Result<CellOutput, CliError> {
    let name = cfg.dataset_name();
    let run_err = |e: ipbc_core::Error| CliError::Run(format!("{method} seed {seed}: {e}"));
    tracing::info!(%method, seed, "running");
    match method {
        Method::KmeansRaw | Method::KmeansPca => kmeans_cell(cfg, ds, method, seed),
        Method::Static => {
            let run = static_pipeline(ds, &name, &cfg.pipeline, seed).map_err(run_err)?;
            let mut metrics = run.metrics;
            metrics.method = method.name().to_string();
            Ok(CellOutput {
                method,
                seed,
                metrics: vec![metrics],
                coords: run.state.coords,
                predicted: run.clusters.labels,
                session: None,
            })
        }
        Method::Ipbc => {
            let report = run_session(ds, &name, cfg.ipbc.rounds, &cfg.pipeline, seed).map_err(run_err)?;
            Ok(CellOutput {
                method,
                seed,
                metrics: report.rounds.iter().map(|r| r.metrics.clone()).collect(),
                coords: report.final_coords.clone(),
                predicted: report.final_clusters.labels.clone(),
                session: Some(report),
            })
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
}

fn coords_csv(ds: &Dataset, cell: &CellOutput) -> Vec<u8> {
    let mut out = Vec::new();
    writeln!(out, "point_id,x,y,label,cluster").expect("in-memory write");
    for i in 0..ds.n_points() {
        let label = ds.labels().map_or(String::new(), |l| l[i].to_string());
        writeln!(
            out,
            "{},{},{},{},{}",
            ds.point_ids()[i],
            cell.coords[[i, 0]],
            cell.coords[[i, 1]],
            label,
            cell.predicted[i]
        )
        .expect("in-memory write");
    }
    out
}

/// Everything `run` wrote.
#[derive(Debug)]
pub struct RunSummary {
    pub metrics: Vec<MetricReport>,
    pub files: Vec<PathBuf>,
}

pub fn metrics_csv(rows: &[MetricReport]) -> String {
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Runs every method × seed cell on up to `jobs` threads and writes the
/// reports into `out`. Report contents do not depend on `jobs`.
pub fn run(cfg: &Config, out: &Path, jobs: usize) -> Result<RunSummary, CliError> {
    let methods = cfg.methods()?;
    let ds = load_dataset(cfg)?;
    fs::create_dir_all(out).map_err(|e| CliError::Run(format!("cannot create {}: {e}", out.display())))?;

    let cells: Vec<(Method, u64)> =
        methods.iter().flat_map(|&m| cfg.run.seeds.iter().map(move |&s| (m, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Run(e.to_string()))?;
    let results: Vec<Result<CellOutput, CliError>> =
        pool.install(|| cells.par_iter().map(|&(m, s)| run_cell(cfg, &ds, m, s)).collect());

    let mut summary = RunSummary { metrics: Vec::new(), files: Vec::new() };
    for result in results {
        let cell = result?;
        let coords_path = out.join(format!("coords_{}_seed{}.csv", cell.method, cell.seed));
        write_file(&coords_path, &coords_csv(&ds, &cell))?;
        summary.files.push(coords_path);
        if let Some(session) = &cell.session {
            let path = out.join(format!("session_{}_seed{}.json", cell.method, cell.seed));
            let json = serde_json::to_vec_pretty(session).map_err(|e| CliError::Run(e.to_string()))?;
            write_file(&path, &json)?;
            summary.files.push(path);
        }
        summary.metrics.extend(cell.metrics);
    }
    let metrics_path = out.join(METRICS_FILE);
    write_file(&metrics_path, metrics_csv(&summary.metrics).as_bytes())?;
    summary.files.push(metrics_path);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn metric() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![Just(None), Just(Some(f64::INFINITY)), (-1.0f64..5.0).prop_map(Some)]
    }

    proptest! {
        #[test]
        fn every_row_has_all_columns(
            ari in metric(), nmi in metric(), sil in metric(), db in metric(),
            seed in any::<u64>(), round in 0usize..10,
        ) {
            let row = MetricReport {
                method: "static".into(),
                dataset: "blobs".into(),
                seed,
                round,
                ari,
                nmi,
                silhouette: sil,
                davies_bouldin: db,
            };
            let text = metrics_csv(&[row]);
            let lines: Vec<&str> = text.lines().collect();
            prop_assert_eq!(lines.len(), 2);
            let cells: Vec<&str> = lines[1].split(',').collect();
            prop_assert_eq!(cells.len(), MetricReport::CSV_HEADER.split(',').count());
            prop_assert_eq!(cells[0], "static");
            prop_assert_eq!(cells[3], round.to_string());
            prop_assert_eq!(cells[4].is_empty(), ari.is_none());
        }
    }

    #[test]
    fn plot_coords_pads_single_column() {
        let x = ndarray::array![[1.0], [2.0]];
        assert_eq!(plot_coords(x.view()), ndarray::array![[1.0, 0.0], [2.0, 0.0]]);
    }
}

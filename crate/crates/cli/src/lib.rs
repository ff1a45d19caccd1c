//! Command implementations behind the `ipbc` binary.

pub mod config;
pub mod run;

use std::path::Path;

use ipbc_core::data::{generate_blobs, save_csv, BlobSpec};
use ipbc_service::ServiceConfig;
use thiserror::Error;

pub use config::{Config, Method};
pub use run::{run, RunSummary, METRICS_FILE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Dataset(_) => 3,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

pub fn cmd_run(config: &Path, out: &Path, jobs: usize) -> Result<RunSummary, CliError> {
    let cfg = Config::load(config)?;
    run(&cfg, out, jobs)
}

pub fn cmd_gen(spec: &BlobSpec, out: &Path) -> Result<(), CliError> {
    let ds = generate_blobs(spec).map_err(|e| CliError::Config(e.to_string()))?;
    save_csv(&ds, out).map_err(|e| CliError::Run(e.to_string()))
}

/// Binds `port` on all interfaces and serves until interrupted.
pub fn cmd_serve(port: u16, config: ServiceConfig) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        ipbc_service::serve(listener, config).await?;
        Ok(())
    })
}

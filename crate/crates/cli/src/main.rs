use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ipbc_cli::{cmd_gen, cmd_run, cmd_serve, CliError};
use ipbc_core::data::BlobSpec;
use ipbc_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "ipbc", version, about = "Interactive constrained-projection clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a method × seed experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Concurrent cells; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Start the HTTP session service.
    Serve {
        /// Overrides IPBC_PORT (default 8787).
        #[arg(long)]
        port: Option<u16>,
    },
    /// Write a Gaussian blob dataset as CSV.
    Gen {
        /// Points per cluster.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 10.0)]
        sep: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// Two cluster indices whose centers sit at half the separation.
        #[arg(long, value_parser = parse_pair)]
        overlap: Option<(usize, usize)>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected i,j")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, jobs } => {
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let summary = cmd_run(&config, &out, jobs)?;
            println!("{} metric rows, {} files in {}", summary.metrics.len(), summary.files.len(), out.display());
            Ok(())
        }
        Command::Serve { port } => {
            let port = match port {
                Some(p) => p,
                None => ipbc_service::port_from_env().map_err(CliError::Config)?,
            };
            cmd_serve(port, ServiceConfig::default())
        }
        Command::Gen { n, d, k, sep, noise, overlap, seed, out } => {
            let spec = BlobSpec {
                n_per_cluster: n,
                d,
                k,
                centers_separation: sep,
                noise_scale: noise,
                overlap_pair: overlap,
                seed,
            };
            cmd_gen(&spec, &out)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

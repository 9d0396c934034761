use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use suffice_harness::{run_replicates, ExperimentConfig};
use suffice_service::AppState;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "suffice", version, about = "Demonstration sufficiency experiments and teaching service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a batch experiment from a TOML or JSON config.
    RunExperiment {
        config: PathBuf,
        /// Output directory for records and the aggregate table.
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Worker threads; all cores by default.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's replicate count.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Serve the teaching API.
    Serve {
        #[arg(long, env = "SUFFICE_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Append-only session log; sessions are kept in memory only when absent.
        #[arg(long, env = "SUFFICE_STORE")]
        store: Option<PathBuf>,
    },
}

fn run_experiment(
    path: PathBuf,
    out: PathBuf,
    jobs: Option<usize>,
    seed: Option<u64>,
    replicates: Option<usize>,
) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(n) = replicates {
        cfg.num_replicates = n;
    }
    let start = Instant::now();
    tracing::info!(name = %cfg.name, replicates = cfg.num_replicates, "running experiment");
    let results = run_replicates(&cfg, jobs)?;
    results.write_to(&out).with_context(|| format!("writing {}", out.display()))?;

    println!("{:<14} {:<26} {:<18} {:>10} {:>10} {:>5}", "method", "hyperparameter", "metric", "mean", "stderr", "n");
    for row in results.table.iter().filter(|r| {
        matches!(r.metric.as_str(), "f1" | "accuracy" | "final_bound" | "sample_efficiency" | "demos_requested")
    }) {
        println!(
            "{:<14} {:<26} {:<18} {:>10.4} {:>10.4} {:>5}",
            row.method, row.hyperparameter, row.metric, row.mean, row.stderr, row.n
        );
    }
    if results.failures() > 0 {
        eprintln!("{} replicates failed; see records.csv", results.failures());
    }
    eprintln!("wrote {} in {:.1}s", out.display(), start.elapsed().as_secs_f64());
    Ok(())
}

async fn serve(host: std::net::IpAddr, port: u16, store: Option<PathBuf>) -> anyhow::Result<()> {
    let state = match &store {
        Some(path) => AppState::open(path).with_context(|| format!("opening store {}", path.display()))?,
        None => AppState::ephemeral(),
    };
    let listener = tokio::net::TcpListener::bind(SocketAddr::new(host, port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    suffice_service::serve(listener, state).await?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::RunExperiment {
            config,
            out,
            jobs,
            seed,
            replicates,
        } => run_experiment(config, out, jobs, seed, replicates),
        Command::Serve { port, host, store } => tokio::runtime::Runtime::new()?.block_on(serve(host, port, store)),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use feshgate::config::Job;

#[derive(Parser)]
#[command(
    name = "feshgate",
    about = "Double-well Feshbach gate: spectra, driven dynamics and pulse optimization"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Interacting energy levels over a magnetic-field grid (CSV)
    Spectrum(RunArgs),
    /// Single gate run: trajectories and the gate summary
    Gate(RunArgs),
    /// CRAB pulse optimization with verification of the winner
    Optimize(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file
    #[arg(long)]
    config: PathBuf,
    /// Random seed; overrides the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    chain: Vec<String>,
}

fn run(job: Job, args: &RunArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let cfg = feshgate::parse_config(&text, args.seed)?;
    if cfg.job != job {
        anyhow::bail!(
            "config declares job = \"{}\" but the {} subcommand was invoked",
            cfg.job.as_str(),
            job.as_str()
        );
    }
    let hash = feshgate::config_hash(&text, cfg.seed);
    feshgate::run_job(&cfg, &hash, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (job, args) = match &cli.cmd {
        Cmd::Spectrum(a) => (Job::Spectrum, a),
        Cmd::Gate(a) => (Job::Gate, a),
        Cmd::Optimize(a) => (Job::Optimize, a),
    };
    match run(job, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                error: e.to_string(),
                chain: e.chain().skip(1).map(|c| c.to_string()).collect(),
            };
            eprintln!(
                "{}",
                serde_json::to_string_pretty(&report)
                    .unwrap_or_else(|_| format!("{{\"error\": \"{e}\"}}"))
            );
            ExitCode::FAILURE
        }
    }
}

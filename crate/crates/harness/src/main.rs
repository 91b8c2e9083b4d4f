use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use tsc_harness::bridge;
use tsc_harness::experiment;
use tsc_harness::{ExperimentConfig, HarnessError, LoadedExperiment, Result};

#[derive(Parser)]
#[command(name = "tsc", version, about = "Regional traffic signal control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured agent and write a learning curve and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fluctuation sweep and write queue tables and summaries.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bin a queue table into 5-vehicle histogram bins.
    Histogram {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expose the environment over newline-delimited JSON on TCP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Exit after this many client connections.
        #[arg(long)]
        max_clients: Option<usize>,
    },
}

fn out_dir(exp: &LoadedExperiment, out: Option<PathBuf>) -> Result<PathBuf> {
    out.or_else(|| exp.config.output_dir.as_ref().map(|p| exp.resolve(p)))
        .ok_or_else(|| HarnessError::Config("no --out given and no output_dir in config".into()))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Train { config, out } => {
            let exp = ExperimentConfig::load(&config)?;
            let dir = out_dir(&exp, out)?;
            let outcome = experiment::train(&exp, &dir)?;
            Ok(json!({
                "ok": true,
                "episodes": outcome.curve.len(),
                "learning_curve": outcome.curve_path,
                "checkpoint": outcome.checkpoint_path,
            }))
        }
        Command::Eval { config, checkpoint, out } => {
            let exp = ExperimentConfig::load(&config)?;
            let dir = out_dir(&exp, out)?;
            let summary = experiment::evaluate(&exp, checkpoint.as_deref(), &dir)?;
            Ok(json!({
                "ok": true,
                "episodes": summary.episodes.len(),
                "summary": dir.join(experiment::SUMMARY_FILE),
            }))
        }
        Command::Histogram { input, out } => {
            let bins = experiment::histogram_from_table(&input, &out)?;
            Ok(json!({ "ok": true, "groups": bins.len(), "histogram": out }))
        }
        Command::Serve {
            config,
            port,
            host,
            max_clients,
        } => {
            let exp = ExperimentConfig::load(&config)?;
            let env = exp.env_config(None)?;
            let addr = format!("{host}:{port}");
            let listener = TcpListener::bind(&addr).map_err(|e| HarnessError::io(&addr, e))?;
            let local = listener.local_addr().map_err(|e| HarnessError::io(&addr, e))?;
            eprintln!("{}", json!({ "listening": local.to_string() }));
            bridge::serve(listener, env, max_clients)?;
            Ok(json!({ "ok": true }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}

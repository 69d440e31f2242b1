use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fedstyle::runner::{run_to_dir, RunOptions};
use fedstyle::{parse_config, Ablation, ExperimentConfig};

/// Run a federated style-memory experiment and write its artifacts.
#[derive(Debug, Parser)]
#[command(name = "fedstyle", version)]
struct Args {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "fedstyle-out")]
    out: PathBuf,
    /// Ablation preset: baseline, nsa, pscu or full.
    #[arg(long)]
    ablation: Option<String>,
    /// Suppress per-round progress.
    #[arg(long)]
    quiet: bool,
}

fn run(args: Args) -> fedstyle::Result<()> {
    let mut config = match &args.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(name) = &args.ablation {
        config.ablation = Ablation::preset(name)?;
    }
    config.validate()?;
    let threads = std::env::var("FEDSTYLE_THREADS")
        .ok()
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| fedstyle::Error::Config(format!("FEDSTYLE_THREADS={v:?} is not a count")))
        })
        .transpose()?;
    let outcome = run_to_dir(
        config,
        &RunOptions {
            out_dir: args.out.clone(),
            threads,
            quiet: args.quiet,
        },
    )?;
    if !args.quiet {
        for r in &outcome.final_reports {
            println!(
                "domain {}: mAP {:.4}  Rank-1 {:.4}",
                r.domain_id, r.report.map, r.report.rank1
            );
        }
        println!("artifacts in {}", args.out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedstyle: {e}");
            ExitCode::FAILURE
        }
    }
}

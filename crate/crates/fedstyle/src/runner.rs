//! Runs an experiment and writes its artifacts to a directory:
//!
//! * `config.toml` – the resolved configuration (parses back to the same run)
//! * `metrics.csv` – `round,plan,domain,map,rank1`, six decimals
//! * `ledger.jsonl` – one JSON object per round
//! * `checkpoint/encoder.txt`, `checkpoint/memory_<client>.txt`
//!
//! Metrics and ledger are rewritten after every round, each file atomically,
//! so an aborted run leaves complete files for the rounds it finished.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{encoder_to_text, memory_to_text, write_atomic};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::federation::{run_experiment_with, ExperimentOutcome, LedgerEntry, MetricRow};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker thread cap for client rounds.
    pub threads: Option<usize>,
    pub quiet: bool,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("round,plan,domain,map,rank1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.6},{:.6}", r.round, r.plan, r.domain, r.map, r.rank1);
    }
    out
}

pub fn ledger_jsonl(entries: &[LedgerEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(|e| crate::Error::Format {
            what: "ledger",
            message: e.to_string(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_checkpoint(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    let dir = dir.join(CHECKPOINT_DIR);
    write_atomic(&dir.join("encoder.txt"), encoder_to_text(&outcome.server.global_encoder).as_bytes())?;
    for c in &outcome.clients {
        if c.memory.is_initialized() {
            write_atomic(
                &dir.join(format!("memory_{}.txt", c.client_id)),
                memory_to_text(&c.memory)?.as_bytes(),
            )?;
        }
    }
    Ok(())
}

/// Runs `config` and writes every artifact under `opts.out_dir`.
pub fn run_to_dir(config: ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let config = config.resolved();
    let dir = &opts.out_dir;
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join(CONFIG_FILE), config.to_text()?.as_bytes())?;
    write_atomic(&dir.join(METRICS_FILE), metrics_csv(&[]).as_bytes())?;
    write_atomic(&dir.join(LEDGER_FILE), b"")?;

    let mut rows: Vec<MetricRow> = Vec::new();
    let mut entries: Vec<LedgerEntry> = Vec::new();
    let quiet = opts.quiet;
    let plan = config.eval.plan.as_str();
    let outcome = run_experiment_with(config, opts.threads, |rec| {
        rows.extend_from_slice(rec.metrics);
        entries.push(rec.entry.clone());
        write_atomic(&dir.join(METRICS_FILE), metrics_csv(&rows).as_bytes())?;
        write_atomic(&dir.join(LEDGER_FILE), ledger_jsonl(&entries)?.as_bytes())?;
        if !quiet {
            let e = rec.entry;
            let test = rec
                .metrics
                .iter()
                .filter(|m| m.plan != "screening")
                .map(|m| format!("{}:{:.3}", m.domain, m.rank1))
                .collect::<Vec<_>>()
                .join(" ");
            eprintln!(
                "round {:>3}  screen r1 {:.4}  {:<8}  test r1 {}  ({:.2?})",
                e.round,
                e.rank1_after,
                format!("{:?}", e.decision).to_lowercase(),
                test,
                e.wall_time
            );
        }
        Ok(())
    })?;

    if outcome.ledger.is_empty() {
        let rows: Vec<MetricRow> = outcome
            .final_reports
            .iter()
            .map(|r| MetricRow {
                round: 0,
                plan: plan.to_string(),
                domain: r.domain_id.to_string(),
                map: r.report.map,
                rank1: r.report.rank1,
            })
            .collect();
        write_atomic(&dir.join(METRICS_FILE), metrics_csv(&rows).as_bytes())?;
    }
    write_checkpoint(dir, &outcome)?;
    Ok(outcome)
}

//! Runs a short experiment into a directory (config echo, metrics.csv,
//! ledger.jsonl, checkpoints) and reloads the artifacts.
//!
//! ```text
//! cargo run --release --example experiment_artifacts -- [out_dir]
//! ```

use std::path::PathBuf;

use fedstyle::checkpoint::{encoder_from_text, memory_from_text};
use fedstyle::runner::{run_to_dir, RunOptions, CONFIG_FILE, LEDGER_FILE, METRICS_FILE};
use fedstyle::{parse_config, ExperimentConfig};

fn main() -> fedstyle::Result<()> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fedstyle-artifacts"));
    let config = ExperimentConfig { rounds: 3, ..ExperimentConfig::default() };
    let outcome = run_to_dir(config, &RunOptions { out_dir: out_dir.clone(), threads: None, quiet: false })?;

    let echoed = parse_config(&out_dir.join(CONFIG_FILE))?;
    println!("config echo: seed {}, {} clients, target domain {}", echoed.seed, echoed.clients.len(), echoed.target.as_ref().map_or(0, |t| t.domain_id));
    println!("{}", std::fs::read_to_string(out_dir.join(METRICS_FILE))?.lines().take(5).collect::<Vec<_>>().join("\n"));
    let ledger = std::fs::read_to_string(out_dir.join(LEDGER_FILE))?;
    println!("ledger: {} rounds; last: {}", ledger.lines().count(), ledger.lines().last().unwrap_or(""));

    let encoder = encoder_from_text(&std::fs::read_to_string(out_dir.join("checkpoint/encoder.txt"))?)?;
    assert_eq!(encoder, outcome.server.global_encoder);
    for c in &outcome.clients {
        let path = out_dir.join(format!("checkpoint/memory_{}.txt", c.client_id));
        let memory = memory_from_text(&std::fs::read_to_string(&path)?)?;
        println!("memory {}: {} prototypes, {} updates", c.client_id, memory.num_identities(), memory.update_count().iter().sum::<u64>());
    }
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

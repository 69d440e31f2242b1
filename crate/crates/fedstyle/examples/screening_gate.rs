//! Injects fully degraded style rounds into an otherwise normal run and
//! shows the screening gate rejecting them: the decision turns negative
//! and every client memory keeps its checkpoint hash.
//!
//! ```text
//! cargo run --release --example screening_gate -- [seed]
//! ```

use fedstyle::federation::Decision;
use fedstyle::{Ablation, Experiment, ExperimentConfig};

fn main() -> fedstyle::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let mut config = ExperimentConfig {
        seed,
        rounds: 16,
        ablation: Ablation::full(),
        forced_degrade_rounds: vec![12, 13],
        ..ExperimentConfig::default()
    };
    config.transform.degrade_sigma = 10.0;

    let mut exp = Experiment::new(config)?;
    let hashes = |exp: &Experiment| -> fedstyle::Result<Vec<String>> {
        exp.clients.iter().map(|c| Ok(c.memory.checkpoint_hash()?[..8].to_string())).collect()
    };
    while !exp.finished() {
        let before = hashes(&exp)?;
        let entry = exp.run_round()?.clone();
        let after = hashes(&exp)?;
        let forced = if exp.config.forced_degrade_rounds.contains(&entry.round) { "forced" } else { "" };
        println!(
            "round {:>2} {forced:<6}  screen Rank-1 {:.4}  {:<8}  degraded {:?}  memory {}",
            entry.round,
            entry.rank1_after,
            if entry.decision == Decision::Positive { "positive" } else { "negative" },
            entry.degraded_batches,
            if before == after { "unchanged".to_string() } else { after.join(",") }
        );
    }
    Ok(())
}

//! Runs the four ablation presets (baseline, +NSA, +PSCU, full) over several
//! seeds and prints the unseen-domain Rank-1 and mAP of each.
//!
//! ```text
//! cargo run --release --example ablation_study -- [rounds] [seeds]
//! ```

use fedstyle::{run_experiment, Ablation, ExperimentConfig};

fn main() -> fedstyle::Result<()> {
    let mut args = std::env::args().skip(1);
    let rounds: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(30);
    let seeds: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);

    println!("{:<10} {:>10} {:>10}   per-seed Rank-1", "preset", "Rank-1", "mAP");
    for name in Ablation::PRESETS {
        let mut rank1 = Vec::new();
        let mut map = Vec::new();
        for seed in 0..seeds {
            let config = ExperimentConfig {
                seed,
                rounds,
                ablation: Ablation::preset(name)?,
                ..ExperimentConfig::default()
            };
            let outcome = run_experiment(config)?;
            let report = &outcome.final_reports[0].report;
            rank1.push(report.rank1);
            map.push(report.map);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let per_seed: Vec<String> = rank1.iter().map(|r| format!("{r:.3}")).collect();
        println!(
            "{:<10} {:>10.4} {:>10.4}   {}",
            name,
            mean(&rank1),
            mean(&map),
            per_seed.join(" ")
        );
    }
    Ok(())
}

//! Plain FedAvg (no style transform, memory or screening) on the default
//! synthetic leave-one-out setup, printing the unseen-domain Rank-1 per
//! round.
//!
//! ```text
//! cargo run --release --example fedavg_baseline -- [rounds] [seed]
//! ```

use fedstyle::{Ablation, Experiment, ExperimentConfig};

fn main() -> fedstyle::Result<()> {
    let mut args = std::env::args().skip(1);
    let rounds = args.next().and_then(|a| a.parse().ok()).unwrap_or(30);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);
    let config = ExperimentConfig {
        seed,
        rounds,
        ablation: Ablation::baseline(),
        ..ExperimentConfig::default()
    };

    let mut exp = Experiment::new(config)?;
    println!("clients: {:?}  weights: {:?}", exp.server.client_sizes, exp.server.weights()?);
    while !exp.finished() {
        let entry = exp.run_round()?.clone();
        let target = exp.evaluate_plan()?;
        let l_ns: Vec<String> = entry.mean_l_ns.iter().map(|l| format!("{l:.3}")).collect();
        println!(
            "round {:>3}  lr {:.0e}  L_NS [{}]  target Rank-1 {:.3}  mAP {:.3}",
            entry.round,
            entry.lr,
            l_ns.join(" "),
            target[0].report.rank1,
            target[0].report.map
        );
    }
    Ok(())
}

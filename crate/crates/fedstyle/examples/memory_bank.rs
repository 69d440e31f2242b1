//! Builds a client's style memory, applies accepted and rejected style
//! updates, and shows that only accepted ones change the checkpoint hash.
//!
//! ```text
//! cargo run --example memory_bank
//! ```

use fedstyle::federation::{initial_server_encoder, ExperimentData};
use fedstyle::memory::{initialize_memory, MemoryConfig, RenormPolicy};
use fedstyle::nn::l2_normalize;
use fedstyle::rng::rng_from_seed;
use fedstyle::style::{sample_pk_batch, style_transform};
use fedstyle::tensor::dot;
use fedstyle::ExperimentConfig;

fn main() -> fedstyle::Result<()> {
    let config = ExperimentConfig::default();
    let data = ExperimentData::generate(&config)?;
    let domain = &data.sources[0];
    let encoder = initial_server_encoder(&config, domain.input_dim())?;

    let mut memory = initialize_memory(domain, &encoder, &config.memory)?;
    println!(
        "memory: {} prototypes of dim {}, momentum {}, policy {}",
        memory.num_identities(),
        memory.dim(),
        memory.momentum(),
        memory.policy().as_str()
    );
    println!("initial hash  {}", &memory.checkpoint_hash()?[..16]);

    let mut rng = rng_from_seed(1);
    for round in 1..=4 {
        let batch = sample_pk_batch(domain, 4, 4, &mut rng)?;
        let styled = style_transform(&batch.features, &config.transform, &mut rng)?;
        let feats = l2_normalize(&encoder.forward(&styled.features)?)?;
        // pretend odd rounds pass the screening gate
        let accepted = round % 2 == 1;
        if accepted {
            for id in batch.labels.iter().step_by(4) {
                let rows: Vec<usize> = (0..batch.len()).filter(|&r| batch.labels[r] == *id).collect();
                let before = memory.prototypes()?.row(*id).to_vec();
                memory.momentum_update(*id, &feats.select_rows(&rows))?;
                let after = memory.prototypes()?.row(*id);
                println!("  round {round}: identity {id:>2} moved, cos(before, after) = {:.4}", dot(&before, after));
            }
        }
        println!(
            "round {round} {}  hash {}",
            if accepted { "positive" } else { "negative" },
            &memory.checkpoint_hash()?[..16]
        );
    }

    let literal = MemoryConfig { policy: RenormPolicy::PaperLiteral, ..config.memory.clone() };
    let raw = initialize_memory(domain, &encoder, &literal)?;
    let norms: Vec<String> = (0..3).map(|i| format!("{:.3}", fedstyle::tensor::norm(raw.prototypes().unwrap().row(i)))).collect();
    println!("paper_literal prototypes are not renormalized: norms {}", norms.join(" "));
    Ok(())
}

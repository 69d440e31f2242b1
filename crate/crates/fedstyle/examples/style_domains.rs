//! Synthesizes source domains, shows how their feature statistics differ,
//! and what the style transform does to a PK batch.
//!
//! ```text
//! cargo run --example style_domains -- [out.csv]
//! ```

use std::fs::File;
use std::io::BufWriter;

use fedstyle::federation::ExperimentData;
use fedstyle::rng::rng_from_seed;
use fedstyle::style::{sample_pk_batch, style_transform, write_csv, StyleTransformConfig};
use fedstyle::{ExperimentConfig, Tensor};

fn column_stats(t: &Tensor, c: usize) -> (f64, f64) {
    let n = t.rows() as f64;
    let mean = (0..t.rows()).map(|r| t.get(r, c)).sum::<f64>() / n;
    let var = (0..t.rows()).map(|r| (t.get(r, c) - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn main() -> fedstyle::Result<()> {
    let config = ExperimentConfig::default();
    let data = ExperimentData::generate(&config)?;

    println!("per-domain statistics of the first three channels (mean ± std)");
    for ds in &data.sources {
        let stats: Vec<String> = (0..3)
            .map(|c| {
                let (m, s) = column_stats(&ds.features, c);
                format!("{m:+.2} ± {s:.2}")
            })
            .collect();
        println!("  domain {}  {} samples  {}", ds.domain_id, ds.len(), stats.join("   "));
    }

    let mut rng = rng_from_seed(config.seed);
    let batch = sample_pk_batch(&data.sources[0], config.batch.p, config.batch.k, &mut rng)?;
    let show = |label: &str, t: &Tensor| {
        let (m, s) = column_stats(t, 0);
        println!("  {label:<22} channel 0: {m:+.3} ± {s:.3}");
    };
    println!("\nstyle transform on one {}x{} PK batch", config.batch.p, config.batch.k);
    show("original", &batch.features);
    for alpha in [0.5, 1.0] {
        let cfg = StyleTransformConfig { mix_alpha: alpha, degrade_prob: 0.0, ..config.transform };
        let out = style_transform(&batch.features, &cfg, &mut rng)?;
        show(&format!("mix_alpha = {alpha}"), &out.features);
    }
    let degrade = StyleTransformConfig { degrade_prob: 1.0, ..config.transform };
    let out = style_transform(&batch.features, &degrade, &mut rng)?;
    show(&format!("degraded ({})", out.degraded), &out.features);

    if let Some(path) = std::env::args().nth(1) {
        write_csv(&data.sources, BufWriter::new(File::create(&path)?))?;
        println!("\nwrote {path}");
    }
    Ok(())
}

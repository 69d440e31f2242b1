//! Ranks a gallery by cosine distance and reports mAP and CMC, first on
//! hand-sized rankings, then for an untrained encoder on a synthetic
//! domain.
//!
//! ```text
//! cargo run --example retrieval_metrics
//! ```

use fedstyle::eval::{compute_cmc, compute_map, evaluate, RankingResult};
use fedstyle::federation::{initial_server_encoder, ExperimentData};
use fedstyle::{ExperimentConfig, Tensor};

fn main() -> fedstyle::Result<()> {
    // one query of identity 0; gallery ordered by distance
    for (gallery_ids, note) in [
        (vec![0, 1, 1], "hit at rank 1"),
        (vec![1, 0, 1], "hit at rank 2"),
        (vec![0, 1, 0, 1], "hits at ranks 1 and 3"),
    ] {
        let dist = Tensor::matrix(1, gallery_ids.len(), (0..gallery_ids.len()).map(|i| i as f64).collect())?;
        let ranking = RankingResult::from_distances(&dist, &[0], &gallery_ids)?;
        let cmc = compute_cmc(&ranking, gallery_ids.len())?;
        println!("{note:<22} AP {:.4}  CMC {cmc:?}", compute_map(&ranking)?);
    }

    let config = ExperimentConfig::default();
    let data = ExperimentData::generate(&config)?;
    let encoder = initial_server_encoder(&config, data.sources[0].input_dim())?;
    let split = &data.eval.target.split;
    let report = evaluate(&encoder, split, config.eval.max_rank)?;
    println!(
        "\nuntrained encoder on the unseen domain ({} queries, {} gallery):",
        split.queries.len(),
        split.gallery.len()
    );
    println!("  mAP {:.4}  Rank-1 {:.4}  Rank-5 {:.4}", report.map, report.rank1, report.cmc[4]);
    Ok(())
}

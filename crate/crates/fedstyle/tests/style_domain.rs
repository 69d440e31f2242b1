//! Statistical and property checks for domain synthesis, the style
//! transform, PK sampling and query/gallery splitting.

use std::collections::HashSet;

use fedstyle::federation::ExperimentData;
use fedstyle::nn::{cross_entropy_loss, ClassifierParams};
use fedstyle::rng::rng_from_seed;
use fedstyle::style::{
    draw_identity_latents, generate_domain, make_query_gallery_split, sample_pk_batch, style_transform, DomainDataset,
    DomainSpec, StyleTransformConfig,
};
use fedstyle::{ExperimentConfig, Tensor};
use rand::Rng;

fn spec(seed: u64, ids: usize, per_id: usize, noise: f64) -> DomainSpec {
    DomainSpec::random_style(0, ids, per_id, 8, noise, 0.5, 1.0, seed)
}

#[test]
fn per_identity_means_match_the_generative_formula() {
    let (ids, per_id, noise) = (20, 200, 0.5);
    let (mut inside, mut total) = (0, 0);
    for seed in 0..5 {
        let spec = spec(seed, ids, per_id, noise);
        let latents = draw_identity_latents(ids, 8, &mut rng_from_seed(seed + 100));
        let ds = generate_domain(&spec, &latents).unwrap();
        for (id, members) in ds.indices_by_identity().iter().enumerate() {
            for c in 0..8 {
                let mean = members.iter().map(|&i| ds.features.get(i, c)).sum::<f64>() / per_id as f64;
                let truth = spec.style_scale[c] * latents.get(id, c) + spec.style_shift[c];
                let sigma = spec.style_scale[c] * noise / (per_id as f64).sqrt();
                let z = (mean - truth).abs() / sigma;
                assert!(z < 5.0, "seed {seed} id {id} channel {c}: {z:.2}σ");
                inside += usize::from(z <= 3.0);
                total += 1;
            }
        }
    }
    // 99.73% expected inside a 3σ band
    assert!(inside as f64 / total as f64 >= 0.99, "{inside}/{total}");
}

#[test]
fn noiseless_unstyled_samples_equal_their_latents() {
    let mut spec = spec(3, 5, 4, 0.0);
    spec.style_scale = vec![1.0; 8];
    spec.style_shift = vec![0.0; 8];
    let latents = draw_identity_latents(5, 8, &mut rng_from_seed(9));
    let ds = generate_domain(&spec, &latents).unwrap();
    for i in 0..ds.len() {
        assert_eq!(ds.features.row(i), latents.row(ds.identities[i]));
    }
    assert_eq!(ds, generate_domain(&spec, &latents).unwrap());
}

/// Mean intra-class pairwise distance over mean distance between class
/// centroids; above 1 the classes are no longer separable by proximity.
fn cluster_ratio(features: &Tensor, labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = labels.to_vec();
        c.sort();
        c.dedup();
        c
    };
    let (mut intra, mut n_intra) = (0.0, 0);
    let mut centroids = Vec::new();
    for &c in &classes {
        let rows: Vec<&[f64]> = (0..labels.len()).filter(|&i| labels[i] == c).map(|i| features.row(i)).collect();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                intra += dist(rows[i], rows[j]);
                n_intra += 1;
            }
        }
        let mut centroid = vec![0.0; features.cols()];
        for r in &rows {
            centroid.iter_mut().zip(*r).for_each(|(m, v)| *m += v / rows.len() as f64);
        }
        centroids.push(centroid);
    }
    let (mut inter, mut n_inter) = (0.0, 0);
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter += dist(&centroids[i], &centroids[j]);
            n_inter += 1;
        }
    }
    (intra / n_intra as f64) / (inter / n_inter as f64)
}

#[test]
fn degradation_makes_identity_clusters_overlap() {
    let degrade = StyleTransformConfig {
        mix_alpha: 0.0,
        degrade_prob: 1.0,
        degrade_sigma: 10.0,
        ..StyleTransformConfig::default()
    };
    for seed in 0..5 {
        let ds = generate_domain_from(spec(seed, 20, 10, 0.3));
        let batch = sample_pk_batch(&ds, 16, 4, &mut rng_from_seed(seed)).unwrap();
        let clean = cluster_ratio(&batch.features, &batch.labels);
        let out = style_transform(&batch.features, &degrade, &mut rng_from_seed(seed)).unwrap();
        assert!(out.degraded);
        let noisy = cluster_ratio(&out.features, &batch.labels);
        assert!(clean < 1.0, "seed {seed}: clean ratio {clean}");
        assert!(noisy > 1.0, "seed {seed}: degraded ratio {noisy}");
    }
}

fn generate_domain_from(spec: DomainSpec) -> DomainDataset {
    fedstyle::style::generate_domain_independent(&spec).unwrap()
}

#[test]
fn transform_preserves_rows_and_is_seeded() {
    let ds = generate_domain_from(spec(1, 10, 6, 0.5));
    let batch = sample_pk_batch(&ds, 5, 3, &mut rng_from_seed(0)).unwrap();
    let cfg = StyleTransformConfig::default();
    let a = style_transform(&batch.features, &cfg, &mut rng_from_seed(77)).unwrap();
    let b = style_transform(&batch.features, &cfg, &mut rng_from_seed(77)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.features.shape(), batch.features.shape());

    let id = StyleTransformConfig::identity();
    let once = style_transform(&batch.features, &id, &mut rng_from_seed(1)).unwrap();
    let twice = style_transform(&once.features, &id, &mut rng_from_seed(2)).unwrap();
    assert_eq!(twice.features, batch.features);
}

#[test]
fn stylized_batch_takes_interpolated_statistics() {
    // with alpha = 1 each column is exactly re-standardized to the drawn style:
    // the column mean is the new mean and the spread is positive
    let ds = generate_domain_from(spec(4, 10, 6, 0.5));
    let batch = sample_pk_batch(&ds, 8, 4, &mut rng_from_seed(0)).unwrap();
    let cfg = StyleTransformConfig {
        mix_alpha: 1.0,
        degrade_prob: 0.0,
        ..StyleTransformConfig::default()
    };
    let out = style_transform(&batch.features, &cfg, &mut rng_from_seed(5)).unwrap();
    for c in 0..out.features.cols() {
        let col: Vec<f64> = (0..out.features.rows()).map(|r| out.features.get(r, c)).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!(std > 0.0 && mean.is_finite());
    }
    // the original column order within each column is preserved (monotone map)
    for c in 0..out.features.cols() {
        for r in 1..out.features.rows() {
            let before = batch.features.get(r, c) > batch.features.get(0, c);
            let after = out.features.get(r, c) > out.features.get(0, c);
            assert_eq!(before, after);
        }
    }
}

#[test]
fn pk_sampling_selects_identities_uniformly() {
    let (ids, p, draws) = (20usize, 4usize, 1000usize);
    let ds = generate_domain_from(spec(2, ids, 6, 0.5));
    let mut rng = rng_from_seed(31);
    let mut counts = vec![0usize; ids];
    for _ in 0..draws {
        let batch = sample_pk_batch(&ds, p, 3, &mut rng).unwrap();
        assert_eq!(batch.len(), p * 3);
        let distinct: HashSet<usize> = batch.labels.iter().copied().collect();
        assert_eq!(distinct.len(), p);
        for &id in &distinct {
            assert_eq!(batch.labels.iter().filter(|&&l| l == id).count(), 3);
            counts[id] += 1;
        }
        let unique_rows: HashSet<usize> = batch.indices.iter().copied().collect();
        assert_eq!(unique_rows.len(), batch.len());
    }
    let q = p as f64 / ids as f64;
    let mean = draws as f64 * q;
    let sd = (draws as f64 * q * (1.0 - q)).sqrt();
    for (id, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "identity {id}: {c} vs {mean}±{:.1}", 3.0 * sd);
    }
}

#[test]
fn pk_sampling_with_every_identity() {
    let ds = generate_domain_from(spec(2, 6, 4, 0.5));
    let batch = sample_pk_batch(&ds, 6, 4, &mut rng_from_seed(0)).unwrap();
    let mut labels = batch.labels.clone();
    labels.sort();
    assert_eq!(labels, (0..6).flat_map(|i| [i; 4]).collect::<Vec<_>>());
    assert!(sample_pk_batch(&ds, 7, 1, &mut rng_from_seed(0)).is_err());
    assert!(sample_pk_batch(&ds, 2, 5, &mut rng_from_seed(0)).is_err());
}

#[test]
fn splits_are_disjoint_and_cover_every_identity() {
    for seed in 0..100u64 {
        let mut rng = rng_from_seed(seed);
        let ids = rng.random_range(2..12);
        let per_id = rng.random_range(2..9);
        let fraction = if seed % 10 == 0 { 0.0 } else { rng.random_range(0.0..0.95) };
        let ds = generate_domain_from(spec(seed, ids, per_id, 0.5));
        let split = make_query_gallery_split(&ds, fraction, &mut rng).unwrap();

        let q: HashSet<usize> = split.queries.iter().map(|s| s.index).collect();
        let g: HashSet<usize> = split.gallery.iter().map(|s| s.index).collect();
        assert!(q.is_disjoint(&g), "seed {seed}");
        assert_eq!(q.len() + g.len(), ds.len(), "seed {seed}");
        for id in 0..ids {
            assert!(split.gallery.iter().any(|s| s.identity == id), "seed {seed}");
            let has_query = split.queries.iter().any(|s| s.identity == id);
            assert_eq!(has_query, fraction > 0.0, "seed {seed}");
        }
    }
}

#[test]
fn forced_and_boundary_splits() {
    let ds = generate_domain_from(spec(0, 5, 2, 0.5));
    let split = make_query_gallery_split(&ds, 0.5, &mut rng_from_seed(0)).unwrap();
    assert_eq!((split.queries.len(), split.gallery.len()), (5, 5));
    let split = make_query_gallery_split(&ds, 0.0, &mut rng_from_seed(0)).unwrap();
    assert!(split.queries.is_empty());
    assert_eq!(split.gallery.len(), ds.len());

    // identity 1 has a single sample
    let features = Tensor::matrix(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let lonely = DomainDataset::new(0, 2, features, vec![0, 0, 1]).unwrap();
    assert!(make_query_gallery_split(&lonely, 0.5, &mut rng_from_seed(0)).is_err());
}

/// Multinomial logistic regression on standardized raw features; returns
/// held-out accuracy.
fn linear_probe_accuracy(domains: &[&DomainDataset], seed: u64) -> f64 {
    let d = domains[0].input_dim();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, ds) in domains.iter().enumerate() {
        for r in ds.features.iter_rows() {
            rows.push(r.to_vec());
            labels.push(k);
        }
    }
    let n = rows.len() as f64;
    for c in 0..d {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let std = (rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n).sqrt();
        rows.iter_mut().for_each(|r| r[c] = (r[c] - mean) / std);
    }
    let mut rng = rng_from_seed(seed);
    let (mut train, mut test): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
    for i in 0..rows.len() {
        if rng.random::<bool>() { train.push(i) } else { test.push(i) }
    }
    let x = Tensor::from_rows(&rows).unwrap();
    let (xtr, ytr) = (x.select_rows(&train), train.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let mut probe = ClassifierParams::init(domains.len(), d, &mut rng);
    for _ in 0..300 {
        let (_, g) = cross_entropy_loss(&probe.forward(&xtr).unwrap(), &ytr, 0.0).unwrap();
        let (grads, _) = probe.backward(&xtr, &g).unwrap();
        probe.weight.axpy(-0.5, &grads.weight).unwrap();
        probe.bias.axpy(-0.5, &grads.bias).unwrap();
    }
    let logits = probe.forward(&x.select_rows(&test)).unwrap();
    let correct = test
        .iter()
        .enumerate()
        .filter(|&(r, &i)| {
            let row = logits.row(r);
            let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            arg == labels[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn default_domains_are_linearly_distinguishable() {
    let mut total = 0.0;
    for seed in 0..5 {
        let config = ExperimentConfig { seed, ..ExperimentConfig::default() };
        let data = ExperimentData::generate(&config).unwrap();
        let domains: Vec<&DomainDataset> = data.sources.iter().collect();
        total += linear_probe_accuracy(&domains, seed);
    }
    let mean = total / 5.0;
    assert!(mean > 0.9, "probe accuracy {mean:.3}");
}

#![allow(dead_code)]

use fedstyle::rng::SimRng;
use fedstyle::Tensor;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_tensor(rows: usize, cols: usize, rng: &mut SimRng) -> Tensor {
    let v = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

pub fn random_unit_rows(rows: usize, cols: usize, rng: &mut SimRng) -> Tensor {
    let mut t = random_tensor(rows, cols, rng);
    for r in 0..rows {
        let row = t.row_mut(r);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }
    t
}

/// PK labels: `p` identities with `k` instances each, shuffled.
pub fn pk_labels(p: usize, k: usize, rng: &mut SimRng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut labels: Vec<usize> = (0..p).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    labels.shuffle(rng);
    labels
}

pub fn random_labels(n: usize, classes: usize, rng: &mut SimRng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Central finite differences of a scalar function of a tensor.
pub fn numeric_gradient(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = f(&probe);
        probe.values_mut()[i] = orig - h;
        let down = f(&probe);
        probe.values_mut()[i] = orig;
        grad.values_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .values()
        .iter()
        .zip(numeric.values())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

use fedstyle::federation::{initial_server_encoder, ExperimentData};
use fedstyle::nn::{
    lr_schedule, sgd_step, triplet_loss, ClassifierParams, EncoderParams, OptimizerState, cross_entropy_loss,
};
use fedstyle::rng::{client_seed, rng_from_seed};
use fedstyle::style::sample_pk_batch;
use fedstyle::ExperimentConfig;

/// A small, fast configuration shared by the integration tests.
pub fn small_config(seed: u64) -> ExperimentConfig {
    let mut config = ExperimentConfig { seed, rounds: 3, ..ExperimentConfig::default() };
    config.data.identities = 8;
    config.eval.val_identities = 6;
    config.eval.test_identities = 6;
    config.batch.p = 4;
    config.iters_per_epoch = 5;
    config
}

/// Plain FedAvg with CE + triplet written directly against the primitives:
/// no style transform, memory or screening. Returns the server encoder
/// after every round.
pub fn reference_fedavg(config: &ExperimentConfig, rounds: usize) -> Vec<EncoderParams> {
    let data = ExperimentData::generate(config).unwrap();
    let mut server = initial_server_encoder(config, data.sources[0].input_dim()).unwrap();
    struct Client {
        rng: SimRng,
        encoder: EncoderParams,
        classifier: ClassifierParams,
        opt_enc: OptimizerState,
        opt_cls: OptimizerState,
    }
    let mut clients: Vec<Client> = data
        .sources
        .iter()
        .map(|ds| {
            let mut rng = rng_from_seed(client_seed(config.seed, ds.domain_id));
            let classifier = ClassifierParams::init(ds.num_identities, server.output_dim(), &mut rng);
            Client {
                rng,
                encoder: server.clone(),
                opt_enc: OptimizerState::new(config.optim.clone(), &server),
                opt_cls: OptimizerState::new(config.optim.clone(), &classifier),
                classifier,
            }
        })
        .collect();
    let total: usize = data.sources.iter().map(|d| d.len()).sum();
    let mut trajectory = Vec::new();
    for round in 1..=rounds {
        for (c, ds) in clients.iter_mut().zip(&data.sources) {
            c.encoder = server.clone();
            c.opt_enc.reset_velocity();
            for epoch in (round - 1) * config.epochs_per_round..round * config.epochs_per_round {
                lr_schedule(&mut c.opt_enc, epoch);
                lr_schedule(&mut c.opt_cls, epoch);
                // 0 means one pass over the client's data
                let iters = match config.iters_per_epoch {
                    0 => ds.len().div_ceil(config.batch.p * config.batch.k),
                    n => n,
                };
                for _ in 0..iters {
                    let batch = sample_pk_batch(ds, config.batch.p, config.batch.k, &mut c.rng).unwrap();
                    let (f, cache) = c.encoder.forward_cached(&batch.features).unwrap();
                    let logits = c.classifier.forward(&f).unwrap();
                    let (_, dlogits) = cross_entropy_loss(&logits, &batch.labels, config.loss.label_smoothing).unwrap();
                    let (_, mut df) = triplet_loss(&f, &batch.labels, config.loss.triplet_margin).unwrap();
                    let (dcls, df_ce) = c.classifier.backward(&f, &dlogits).unwrap();
                    df.axpy(1.0, &df_ce).unwrap();
                    let genc = c.encoder.backward(&cache, &df).unwrap();
                    sgd_step(&mut c.encoder, &genc, &mut c.opt_enc).unwrap();
                    sgd_step(&mut c.classifier, &dcls, &mut c.opt_cls).unwrap();
                }
            }
        }
        // FedAvg, parameter by parameter
        let mut next = server.zeros_like();
        for (c, ds) in clients.iter().zip(&data.sources) {
            let w = ds.len() as f64 / total as f64;
            for (l, layer) in c.encoder.layers.iter().enumerate() {
                let dst = &mut next.layers[l];
                for (d, s) in dst.weight.values_mut().iter_mut().zip(layer.weight.values()) {
                    *d += w * s;
                }
                for (d, s) in dst.bias.values_mut().iter_mut().zip(layer.bias.values()) {
                    *d += w * s;
                }
            }
        }
        server = next;
        trajectory.push(server.clone());
    }
    trajectory
}

pub fn max_param_diff(a: &EncoderParams, b: &EncoderParams) -> f64 {
    a.layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| x.weight.max_abs_diff(&y.weight).max(x.bias.max_abs_diff(&y.bias)))
        .fold(0.0, f64::max)
}

pub struct MetricInstance {
    pub dist: Tensor,
    pub qids: Vec<usize>,
    pub gids: Vec<usize>,
}

/// Random ranking problem (≤ 10 queries, ≤ 20 gallery); small integer
/// distances so ties are common.
pub fn random_metric_instance(rng: &mut impl Rng) -> MetricInstance {
    let q = rng.random_range(1..=10);
    let g = rng.random_range(1..=20);
    let classes = rng.random_range(1..=4);
    let mut gids: Vec<usize> = (0..g).map(|_| rng.random_range(0..classes)).collect();
    let present: Vec<usize> = {
        let mut p = gids.clone();
        p.sort();
        p.dedup();
        p
    };
    let qids: Vec<usize> = (0..q).map(|_| *present.choose(rng).unwrap()).collect();
    gids.shrink_to_fit();
    let dist = Tensor::matrix(q, g, (0..q * g).map(|_| rng.random_range(0..6) as f64).collect()).unwrap();
    MetricInstance { dist, qids, gids }
}

/// Rank (1-based) of gallery item `j` for query `q`: everything strictly
/// closer plus ties with a lower gallery index comes first.
fn brute_rank(inst: &MetricInstance, q: usize, j: usize) -> usize {
    let row = inst.dist.row(q);
    1 + (0..row.len()).filter(|&i| row[i] < row[j] || (row[i] == row[j] && i < j)).count()
}

pub fn brute_force_metrics(inst: &MetricInstance, max_rank: usize) -> (f64, Vec<f64>) {
    let q = inst.qids.len();
    let mut map = 0.0;
    let mut cmc = vec![0.0; max_rank];
    for qi in 0..q {
        let mut ranks: Vec<usize> = (0..inst.gids.len())
            .filter(|&j| inst.gids[j] == inst.qids[qi])
            .map(|j| brute_rank(inst, qi, j))
            .collect();
        ranks.sort();
        let ap = ranks
            .iter()
            .map(|&r| ranks.iter().filter(|&&s| s <= r).count() as f64 / r as f64)
            .sum::<f64>()
            / ranks.len() as f64;
        map += ap / q as f64;
        for (k, slot) in cmc.iter_mut().enumerate() {
            if ranks[0] <= k + 1 {
                *slot += 1.0 / q as f64;
            }
        }
    }
    (map, cmc)
}


//! The federated training loop.
//!
//! One communication round is: distribute the server encoder to every
//! client, run collaborative style training locally, aggregate the uploaded
//! encoders weighted by client data volume, evaluate the new server model on
//! held-out source identities, and commit the round's style features to the
//! client memories only if Rank-1 went up.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, ExperimentConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_plan, DomainReport, DomainSplit, EvalData};
use crate::memory::{initialize_memory, StyleMemory, UpdateOutcome};
use crate::nn::{
    cross_entropy_loss, l2_normalize, l2_normalize_backward, lr_at_epoch, lr_schedule, recognition_loss, sgd_step,
    triplet_loss, ClassifierParams, EncoderParams, LossConfig, OptimizerConfig, OptimizerState, Parameters,
};
use crate::rng::{client_seed, derive_seed, rng_from_seed, SimRng};
use crate::style::{
    draw_latent_basis, generate_domain_in_subspace, generate_domain_independent, make_query_gallery_split, sample_pk_batch, style_transform, Batch, DomainDataset,
    DomainSpec, StyleTransformConfig,
};
use crate::tensor::Tensor;

/// Everything a client keeps between rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u32,
    pub dataset: DomainDataset,
    /// Downloaded copy of the server encoder; the only thing uploaded.
    pub client_global: EncoderParams,
    /// Never uploaded; trained by the memory recognition loss only.
    pub client_local: EncoderParams,
    pub classifier: ClassifierParams,
    pub memory: StyleMemory,
    pub transform: StyleTransformConfig,
    pub opt_global: OptimizerState,
    pub opt_local: OptimizerState,
    pub opt_classifier: OptimizerState,
    pub rng: SimRng,
}

/// Server-side state. Holds no classifier: heads never leave their client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global_encoder: EncoderParams,
    /// Number of completed rounds.
    pub round: usize,
    pub last_rank1: Option<f64>,
    pub client_sizes: Vec<usize>,
}

impl ServerState {
    pub fn new(global_encoder: EncoderParams, client_sizes: Vec<usize>) -> Self {
        Self {
            global_encoder,
            round: 0,
            last_rank1: None,
            client_sizes,
        }
    }

    /// Aggregation weights `N_k / N`.
    pub fn weights(&self) -> Result<Vec<f64>> {
        let total: usize = self.client_sizes.iter().sum();
        if total == 0 {
            return Err(Error::Config("clients hold no data (N = 0)".into()));
        }
        Ok(self
            .client_sizes
            .iter()
            .map(|&n| n as f64 / total as f64)
            .collect())
    }
}

/// Unit-norm style features of one client's round, grouped by identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientStyleCache {
    pub client_id: u32,
    pub by_identity: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl ClientStyleCache {
    pub fn new(client_id: u32) -> Self {
        Self {
            client_id,
            by_identity: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, identity: usize, row: &[f64]) {
        self.by_identity.entry(identity).or_default().push(row.to_vec());
    }

    pub fn num_rows(&self) -> usize {
        self.by_identity.values().map(Vec::len).sum()
    }

    pub fn features(&self, identity: usize) -> Option<Tensor> {
        self.by_identity
            .get(&identity)
            .map(|rows| Tensor::from_rows(rows).expect("rows share the encoder width"))
    }
}

/// Style features of every client for the current round. A fresh cache is
/// built each round and consumed by [`screen_and_update`].
pub type StyleFeatureCache = Vec<ClientStyleCache>;

/// Per-iteration losses of one client round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossReport {
    pub new_style: Vec<f64>,
    pub positive_style: Vec<f64>,
    pub degraded_batches: usize,
}

impl LossReport {
    pub fn mean_new_style(&self) -> f64 {
        mean(&self.new_style)
    }

    pub fn mean_positive_style(&self) -> f64 {
        mean(&self.positive_style)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Settings shared by every client in one round.
#[derive(Debug, Clone)]
pub struct RoundPlan {
    /// Zero-based epoch index of the first local epoch of this round.
    pub first_epoch: usize,
    pub epochs: usize,
    /// 0 means `ceil(N_k / (P·K))`.
    pub iters_per_epoch: usize,
    pub batch_p: usize,
    pub batch_k: usize,
    pub loss: LossConfig,
    pub ablation: Ablation,
    /// Every transform degrades its batch this round.
    pub force_degrade: bool,
}

impl ClientState {
    /// Builds a client around its dataset. The client-local encoder starts
    /// as a copy of `server_encoder`; the memory is left uninitialized.
    pub fn new(
        dataset: DomainDataset,
        server_encoder: &EncoderParams,
        optim: &OptimizerConfig,
        memory: &crate::memory::MemoryConfig,
        transform: StyleTransformConfig,
        mut rng: SimRng,
    ) -> Self {
        let classifier = ClassifierParams::init(dataset.num_identities, server_encoder.output_dim(), &mut rng);
        Self {
            client_id: dataset.domain_id,
            opt_global: OptimizerState::new(optim.clone(), server_encoder),
            opt_local: OptimizerState::new(optim.clone(), server_encoder),
            opt_classifier: OptimizerState::new(optim.clone(), &classifier),
            memory: StyleMemory::new(
                dataset.num_identities,
                server_encoder.output_dim(),
                memory.momentum,
                memory.policy,
            ),
            client_global: server_encoder.clone(),
            client_local: server_encoder.clone(),
            classifier,
            transform,
            dataset,
            rng,
        }
    }

    fn iterations(&self, plan: &RoundPlan, p: usize) -> usize {
        if plan.iters_per_epoch > 0 {
            plan.iters_per_epoch
        } else {
            self.dataset.len().div_ceil(p * plan.batch_k)
        }
    }

    /// Identities per batch, clamped to what this client can supply.
    pub fn effective_p(&self, requested: usize) -> usize {
        if requested > self.dataset.num_identities {
            log::warn!(
                "client {}: batch P = {requested} exceeds its {} identities, clamping",
                self.client_id,
                self.dataset.num_identities
            );
            self.dataset.num_identities
        } else {
            requested
        }
    }

    /// Cross-entropy warm-up of the client-local encoder and classifier on
    /// original samples, followed by memory initialization with the
    /// warmed-up encoder.
    pub fn initialize(&mut self, warmup_epochs: usize, plan: &RoundPlan, memory: &crate::memory::MemoryConfig) -> Result<()> {
        let p = self.effective_p(plan.batch_p);
        let iters = self.iterations(plan, p);
        lr_schedule(&mut self.opt_local, 0);
        lr_schedule(&mut self.opt_classifier, 0);
        for _ in 0..warmup_epochs * iters {
            let batch = sample_pk_batch(&self.dataset, p, plan.batch_k, &mut self.rng)?;
            let (f, cache) = self.client_local.forward_cached(&batch.features)?;
            let logits = self.classifier.forward(&f)?;
            let (_, dlogits) = cross_entropy_loss(&logits, &batch.labels, plan.loss.label_smoothing)?;
            let (dcls, df) = self.classifier.backward(&f, &dlogits)?;
            let genc = self.client_local.backward(&cache, &df)?;
            sgd_step(&mut self.client_local, &genc, &mut self.opt_local)?;
            sgd_step(&mut self.classifier, &dcls, &mut self.opt_classifier)?;
        }
        self.opt_local.reset_velocity();
        self.opt_classifier.reset_velocity();
        self.memory = initialize_memory(&self.dataset, &self.client_local, memory)?;
        Ok(())
    }

    /// One round of collaborative style training.
    ///
    /// Per iteration: sample a PK batch and stylize it. The new-style branch
    /// takes an `L_NS` step on the client-global encoder and classifier with
    /// the stylized batch. The positive-style branch takes `L_PS` steps on
    /// both encoders with the original batch and caches the normalized
    /// client-global features of the stylized batch for the memory. When the
    /// positive-style branch is off, the original batch is learned with the
    /// `L_NS` objective instead (plain FedAvg training when both are off).
    pub fn cst_round(&mut self, plan: &RoundPlan) -> Result<(ClientStyleCache, LossReport)> {
        let use_memory = plan.ablation.enable_pscu;
        if use_memory && !self.memory.is_initialized() {
            return Err(Error::State(format!(
                "client {}: memory must be initialized before training",
                self.client_id
            )));
        }
        let transform = if plan.force_degrade {
            StyleTransformConfig {
                degrade_prob: 1.0,
                ..self.transform
            }
        } else {
            self.transform
        };
        let p = self.effective_p(plan.batch_p);
        let iters = self.iterations(plan, p);
        let mut cache = ClientStyleCache::new(self.client_id);
        let mut report = LossReport::default();

        for epoch in plan.first_epoch..plan.first_epoch + plan.epochs {
            for opt in [&mut self.opt_global, &mut self.opt_local, &mut self.opt_classifier] {
                lr_schedule(opt, epoch);
            }
            for _ in 0..iters {
                let batch = sample_pk_batch(&self.dataset, p, plan.batch_k, &mut self.rng)?;
                // styles are generated whenever a branch consumes them
                let styled = if plan.ablation.enable_nsa || use_memory {
                    let out = style_transform(&batch.features, &transform, &mut self.rng)?;
                    report.degraded_batches += usize::from(out.degraded);
                    Some(out.features)
                } else {
                    None
                };

                if let (true, Some(styled)) = (plan.ablation.enable_nsa, &styled) {
                    report.new_style.push(self.new_style_step(styled, &batch.labels, &plan.loss)?);
                }

                if use_memory {
                    report.positive_style.push(self.positive_style_step(&batch, &plan.loss)?);
                    let styled = styled.as_ref().expect("generated above");
                    let feats = l2_normalize(&self.client_global.forward(styled)?)?;
                    for (row, &label) in feats.iter_rows().zip(&batch.labels) {
                        cache.push(label, row);
                    }
                } else {
                    // without the memory branch the original images are
                    // learned with the same CE + triplet objective
                    let loss = self.new_style_step(&batch.features, &batch.labels, &plan.loss)?;
                    if !plan.ablation.enable_nsa {
                        report.new_style.push(loss);
                    }
                }
            }
        }
        Ok((cache, report))
    }

    /// `L_NS = CE(cls(f_G(x̂)), y) + Tri(f_G(x̂), y)`; steps `f_G` and `cls`.
    fn new_style_step(&mut self, styled: &Tensor, labels: &[usize], loss: &LossConfig) -> Result<f64> {
        let (f, cache) = self.client_global.forward_cached(styled)?;
        let logits = self.classifier.forward(&f)?;
        let (ce, dlogits) = cross_entropy_loss(&logits, labels, loss.label_smoothing)?;
        let (tri, mut df) = triplet_loss(&f, labels, loss.triplet_margin)?;
        let (dcls, df_ce) = self.classifier.backward(&f, &dlogits)?;
        df.axpy(1.0, &df_ce)?;
        let genc = self.client_global.backward(&cache, &df)?;
        sgd_step(&mut self.client_global, &genc, &mut self.opt_global)?;
        sgd_step(&mut self.classifier, &dcls, &mut self.opt_classifier)?;
        Ok(ce + tri)
    }

    /// `L_PS = L_id(f_L) + L_id(f_G)` on original samples; steps both encoders.
    fn positive_style_step(&mut self, batch: &Batch, loss: &LossConfig) -> Result<f64> {
        let prototypes = self.memory.prototypes()?.clone();
        let local = recognition_step(
            &mut self.client_local,
            &mut self.opt_local,
            batch,
            &prototypes,
            loss.temperature,
        )?;
        let global = recognition_step(
            &mut self.client_global,
            &mut self.opt_global,
            batch,
            &prototypes,
            loss.temperature,
        )?;
        Ok(local + global)
    }
}

fn recognition_step(
    encoder: &mut EncoderParams,
    opt: &mut OptimizerState,
    batch: &Batch,
    prototypes: &Tensor,
    temperature: f64,
) -> Result<f64> {
    let (f, cache) = encoder.forward_cached(&batch.features)?;
    let unit = l2_normalize(&f)?;
    let (loss, dunit) = recognition_loss(&unit, &batch.labels, prototypes, temperature)?;
    let df = l2_normalize_backward(&f, &dunit)?;
    let grads = encoder.backward(&cache, &df)?;
    sgd_step(encoder, &grads, opt)?;
    Ok(loss)
}

/// Server model download: every client-global encoder becomes a copy of
/// the server encoder and its optimizer velocity is cleared.
pub fn distribute(server: &ServerState, clients: &mut [ClientState]) {
    for c in clients {
        c.client_global = server.global_encoder.clone();
        c.opt_global.reset_velocity();
    }
}

/// `Σ_k w_k θ_k` over encoders of identical architecture, accumulated in
/// client order.
pub fn weighted_average(models: &[&EncoderParams], weights: &[f64]) -> Result<EncoderParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("no models to aggregate".into()))?;
    if models.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} models, {} weights",
            models.len(),
            weights.len()
        )));
    }
    let mut out = first.zeros_like();
    for (model, &w) in models.iter().zip(weights) {
        if model.activation != out.activation {
            return Err(Error::Shape("aggregating encoders with different activations".into()));
        }
        let src = model.tensors();
        let mut dst = out.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::Shape("aggregating encoders with different depths".into()));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            d.axpy(w, s)?;
        }
    }
    Ok(out)
}

/// Data-volume-weighted FedAvg of the uploaded client-global encoders.
pub fn aggregate(server: &mut ServerState, clients: &[ClientState]) -> Result<()> {
    if clients.len() != server.client_sizes.len() {
        return Err(Error::State(format!(
            "server expects {} clients, got {}",
            server.client_sizes.len(),
            clients.len()
        )));
    }
    let weights = server.weights()?;
    let models: Vec<&EncoderParams> = clients.iter().map(|c| &c.client_global).collect();
    server.global_encoder = weighted_average(&models, &weights)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Positive,
    Negative,
}

/// Positive on the first round, or when Rank-1 strictly improved.
pub fn screening_decision(rank1_before: Option<f64>, rank1_after: f64) -> Decision {
    match rank1_before {
        None => Decision::Positive,
        Some(prev) if rank1_after > prev => Decision::Positive,
        Some(_) => Decision::Negative,
    }
}

/// Mean Rank-1 of `encoder` over the screening splits.
pub fn screening_rank1(encoder: &EncoderParams, splits: &[DomainSplit], max_rank: usize) -> Result<(f64, Vec<DomainReport>)> {
    if splits.is_empty() {
        return Err(Error::Eval("no screening split".into()));
    }
    let reports = splits
        .iter()
        .map(|s| {
            Ok(DomainReport {
                domain_id: s.domain_id,
                report: evaluate(encoder, &s.split, max_rank)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rank1 = reports.iter().map(|r| r.report.rank1).sum::<f64>() / reports.len() as f64;
    Ok((rank1, reports))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenOutcome {
    pub rank1_before: Option<f64>,
    pub rank1_after: f64,
    pub decision: Decision,
    pub memory_updated: bool,
    pub reports: Vec<DomainReport>,
}

/// Evaluates the aggregated model and, on a positive decision (or always,
/// when `gate` is false), folds each client's cached style features into
/// its memory. `last_rank1` is advanced either way.
pub fn screen_and_update(
    server: &mut ServerState,
    clients: &mut [ClientState],
    cache: StyleFeatureCache,
    screening: &[DomainSplit],
    gate: bool,
    max_rank: usize,
) -> Result<ScreenOutcome> {
    let (rank1_after, reports) = screening_rank1(&server.global_encoder, screening, max_rank)?;
    let rank1_before = server.last_rank1;
    let decision = screening_decision(rank1_before, rank1_after);
    let apply = (decision == Decision::Positive || !gate) && !cache.is_empty();
    if apply {
        for slice in &cache {
            let client = clients
                .iter_mut()
                .find(|c| c.client_id == slice.client_id)
                .ok_or_else(|| Error::State(format!("cache for unknown client {}", slice.client_id)))?;
            for &identity in slice.by_identity.keys() {
                let feats = slice.features(identity).expect("key exists");
                if client.memory.momentum_update(identity, &feats)? == UpdateOutcome::SkippedEmpty {
                    log::warn!(
                        "client {}: no style features for identity {identity}",
                        client.client_id
                    );
                }
            }
        }
    }
    server.last_rank1 = Some(rank1_after);
    Ok(ScreenOutcome {
        rank1_before,
        rank1_after,
        decision,
        memory_updated: apply,
        reports,
    })
}

/// One line of `ledger.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub rank1_before: Option<f64>,
    pub rank1_after: f64,
    pub decision: Decision,
    pub memory_updated: bool,
    pub mean_l_ns: Vec<f64>,
    pub mean_l_ps: Vec<f64>,
    pub degraded_batches: Vec<usize>,
    pub lr: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: usize,
    pub plan: String,
    pub domain: String,
    pub map: f64,
    pub rank1: f64,
}

impl MetricRow {
    fn from_report(round: usize, plan: &str, r: &DomainReport) -> Self {
        Self {
            round,
            plan: plan.to_string(),
            domain: r.domain_id.to_string(),
            map: r.report.map,
            rank1: r.report.rank1,
        }
    }
}

/// Generated data of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    /// Training data of every source domain, in config order.
    pub sources: Vec<DomainDataset>,
    /// Held-out identities of each source, used for screening.
    pub screening: Vec<DomainSplit>,
    pub eval: EvalData,
}

impl ExperimentData {
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        let (specs, target_spec) = config.domains();
        let held_out = |spec: &DomainSpec, identities: usize, tag: u64| DomainSpec {
            num_identities: identities,
            seed: derive_seed(spec.seed, tag),
            ..spec.clone()
        };
        let split = |ds: &DomainDataset, tag: u64| -> Result<DomainSplit> {
            let mut rng = rng_from_seed(derive_seed(config.seed ^ u64::from(ds.domain_id), tag));
            Ok(DomainSplit {
                domain_id: ds.domain_id,
                split: make_query_gallery_split(ds, config.eval.query_fraction, &mut rng)?,
            })
        };
        let basis = (config.data.latent_rank > 0).then(|| {
            let mut rng = rng_from_seed(derive_seed(config.seed, 0xba515));
            draw_latent_basis(target_spec.input_dim(), config.data.latent_rank, &mut rng)
        });
        let render = |spec: &DomainSpec| match &basis {
            Some(b) => generate_domain_in_subspace(spec, b),
            None => generate_domain_independent(spec),
        };
        let mut sources = Vec::with_capacity(specs.len());
        let mut screening = Vec::with_capacity(specs.len());
        let mut source_tests = Vec::with_capacity(specs.len());
        for spec in &specs {
            sources.push(render(spec)?);
            let val = render(&held_out(spec, config.eval.val_identities, 0x7a1))?;
            screening.push(split(&val, 0x7a1)?);
            let test = render(&held_out(spec, config.eval.test_identities, 0x7e57))?;
            source_tests.push(split(&test, 0x7e57)?);
        }
        let target = render(&target_spec)?;
        Ok(Self {
            sources,
            screening,
            eval: EvalData {
                target: split(&target, 0x7a76)?,
                sources: source_tests,
            },
        })
    }
}

/// What a round produced, handed to observers.
pub struct RoundRecord<'a> {
    pub entry: &'a LedgerEntry,
    pub metrics: &'a [MetricRow],
    pub server: &'a ServerState,
    pub clients: &'a [ClientState],
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub ledger: Vec<LedgerEntry>,
    /// Per-round rows (screening and plan evaluation).
    pub metrics: Vec<MetricRow>,
    /// Plan evaluation of the final server model.
    pub final_reports: Vec<DomainReport>,
}

/// A running experiment; advance it with [`Experiment::run_round`].
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: ExperimentData,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub ledger: Vec<LedgerEntry>,
    pub metrics: Vec<MetricRow>,
    pool: Option<rayon::ThreadPool>,
}

/// Initial server encoder for a config (seeded independently of clients).
pub fn initial_server_encoder(config: &ExperimentConfig, input_dim: usize) -> Result<EncoderParams> {
    let mut dims = vec![input_dim];
    dims.extend(&config.model.hidden);
    dims.push(config.model.output_dim);
    let mut rng = rng_from_seed(derive_seed(config.seed, 0x5e7));
    EncoderParams::init(&dims, config.model.activation, &mut rng)
}

impl Experiment {
    /// Generates data, builds the server and clients and runs memory
    /// initialization when the memory branch is enabled.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        Self::with_threads(config, None)
    }

    /// Like [`new`](Self::new) with a cap on worker threads (`None` lets
    /// the pool pick).
    pub fn with_threads(config: ExperimentConfig, threads: Option<usize>) -> Result<Self> {
        config.validate()?;
        let data = ExperimentData::generate(&config)?;
        let input_dim = data.sources[0].input_dim();
        let encoder = initial_server_encoder(&config, input_dim)?;
        let training = config.eval.plan.training_sources(data.sources.len());
        let mut clients: Vec<ClientState> = training
            .iter()
            .map(|&i| {
                let ds = data.sources[i].clone();
                let rng = rng_from_seed(client_seed(config.seed, ds.domain_id));
                ClientState::new(ds, &encoder, &config.optim, &config.memory, config.transform, rng)
            })
            .collect();
        let sizes = clients.iter().map(|c| c.dataset.len()).collect();
        let server = ServerState::new(encoder, sizes);
        let pool = if config.parallel {
            let mut b = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                b = b.num_threads(n);
            }
            Some(b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?)
        } else {
            None
        };
        if config.ablation.enable_pscu {
            let plan = Self::round_plan(&config, 0, false);
            let warmup = config.memory.warmup_epochs;
            let memory = config.memory.clone();
            run_clients(pool.as_ref(), &mut clients, |c| c.initialize(warmup, &plan, &memory))?;
        }
        Ok(Self {
            config,
            data,
            server,
            clients,
            ledger: Vec::new(),
            metrics: Vec::new(),
            pool,
        })
    }

    fn round_plan(config: &ExperimentConfig, round: usize, force_degrade: bool) -> RoundPlan {
        RoundPlan {
            first_epoch: round.saturating_sub(1) * config.epochs_per_round,
            epochs: config.epochs_per_round,
            iters_per_epoch: config.iters_per_epoch,
            batch_p: config.batch.p,
            batch_k: config.batch.k,
            loss: config.loss,
            ablation: config.ablation,
            force_degrade,
        }
    }

    pub fn finished(&self) -> bool {
        self.server.round >= self.config.rounds
    }

    /// Runs one communication round and returns its ledger entry.
    pub fn run_round(&mut self) -> Result<&LedgerEntry> {
        let start = Instant::now();
        let round = self.server.round + 1;
        let force = self.config.forced_degrade_rounds.contains(&round);
        let plan = Self::round_plan(&self.config, round, force);

        distribute(&self.server, &mut self.clients);
        let results = run_clients(self.pool.as_ref(), &mut self.clients, |c| c.cst_round(&plan))?;
        let (cache, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        aggregate(&mut self.server, &self.clients)?;

        let cache = if self.config.ablation.enable_pscu {
            cache
        } else {
            Vec::new()
        };
        let outcome = screen_and_update(
            &mut self.server,
            &mut self.clients,
            cache,
            &self.data.screening,
            self.config.ablation.enable_screening,
            self.config.eval.max_rank,
        )?;
        self.server.round = round;

        for r in &outcome.reports {
            self.metrics.push(MetricRow::from_report(round, "screening", r));
        }
        let plan_name = self.config.eval.plan.as_str();
        for r in self.evaluate_plan()? {
            self.metrics.push(MetricRow::from_report(round, plan_name, &r));
        }

        let last_epoch = plan.first_epoch + plan.epochs - 1;
        self.ledger.push(LedgerEntry {
            round,
            rank1_before: outcome.rank1_before,
            rank1_after: outcome.rank1_after,
            decision: outcome.decision,
            memory_updated: outcome.memory_updated,
            mean_l_ns: reports.iter().map(LossReport::mean_new_style).collect(),
            mean_l_ps: reports.iter().map(LossReport::mean_positive_style).collect(),
            degraded_batches: reports.iter().map(|r| r.degraded_batches).collect(),
            lr: lr_at_epoch(&self.config.optim, last_epoch),
            wall_time: start.elapsed(),
        });
        Ok(self.ledger.last().expect("just pushed"))
    }

    /// Evaluates the current server model under the configured plan.
    pub fn evaluate_plan(&self) -> Result<Vec<DomainReport>> {
        evaluate_plan(
            &self.server.global_encoder,
            self.config.eval.plan,
            &self.data.eval,
            self.config.eval.max_rank,
        )
    }

    pub fn record(&self) -> Option<RoundRecord<'_>> {
        let entry = self.ledger.last()?;
        let round = entry.round;
        let first = self.metrics.iter().position(|m| m.round == round).unwrap_or(self.metrics.len());
        Some(RoundRecord {
            entry,
            metrics: &self.metrics[first..],
            server: &self.server,
            clients: &self.clients,
        })
    }

    pub fn finish(self) -> Result<ExperimentOutcome> {
        let final_reports = self.evaluate_plan()?;
        Ok(ExperimentOutcome {
            server: self.server,
            clients: self.clients,
            ledger: self.ledger,
            metrics: self.metrics,
            final_reports,
        })
    }
}

fn run_clients<T, F>(pool: Option<&rayon::ThreadPool>, clients: &mut [ClientState], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ClientState) -> Result<T> + Sync,
{
    match pool {
        Some(pool) => pool.install(|| clients.par_iter_mut().map(&f).collect()),
        None => clients.iter_mut().map(f).collect(),
    }
}

/// Runs a whole experiment, calling `observer` after every round.
pub fn run_experiment_with<F>(config: ExperimentConfig, threads: Option<usize>, mut observer: F) -> Result<ExperimentOutcome>
where
    F: FnMut(&RoundRecord<'_>) -> Result<()>,
{
    let mut exp = Experiment::with_threads(config, threads)?;
    while !exp.finished() {
        exp.run_round()?;
        observer(&exp.record().expect("a round just ran"))?;
    }
    exp.finish()
}

pub fn run_experiment(config: ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with(config, None, |_| Ok(()))
}

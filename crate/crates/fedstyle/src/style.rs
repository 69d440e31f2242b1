//! Synthetic multi-domain identity data and the feature-statistics style
//! transform used in place of a learned stylization network.
//!
//! A domain draws one latent vector per identity and renders every sample
//! as `style_scale ⊙ (latent + ε) + style_shift`. Different domains differ in
//! their per-channel scale and shift, which is the "style" a model has to
//! become invariant to.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;

/// Variance floor for per-feature batch statistics.
const STAT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub domain_id: u32,
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub style_scale: Vec<f64>,
    pub style_shift: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DomainSpec {
    pub fn input_dim(&self) -> usize {
        self.style_scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::Config(format!(
                "domain {} needs at least 2 identities, has {}",
                self.domain_id, self.num_identities
            )));
        }
        if self.samples_per_identity < 2 {
            return Err(Error::Config(format!(
                "domain {} needs at least 2 samples per identity, has {}",
                self.domain_id, self.samples_per_identity
            )));
        }
        if self.style_shift.len() != self.style_scale.len() || self.style_scale.is_empty() {
            return Err(Error::Config(format!(
                "domain {}: style scale and shift must have the same non-zero length",
                self.domain_id
            )));
        }
        if self.style_scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config(format!(
                "domain {}: style scale entries must be positive",
                self.domain_id
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!(
                "domain {}: noise sigma must be non-negative",
                self.domain_id
            )));
        }
        Ok(())
    }

    /// A spec with a random style: `scale = exp(N(0, scale_spread²))`,
    /// `shift = N(0, shift_spread²)` per channel.
    pub fn random_style(
        domain_id: u32,
        num_identities: usize,
        samples_per_identity: usize,
        input_dim: usize,
        noise_sigma: f64,
        scale_spread: f64,
        shift_spread: f64,
        seed: u64,
    ) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, 0x5717e));
        let mut draw = |spread: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * spread
        };
        let style_scale = (0..input_dim).map(|_| draw(scale_spread).exp()).collect();
        let style_shift = (0..input_dim).map(|_| draw(shift_spread)).collect();
        Self {
            domain_id,
            num_identities,
            samples_per_identity,
            style_scale,
            style_shift,
            noise_sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub identity: usize,
    pub domain: u32,
    /// Position of the sample in its dataset.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: u32,
    pub num_identities: usize,
    /// `N × d_in`, identity-major order.
    pub features: Tensor,
    pub identities: Vec<usize>,
}

impl DomainDataset {
    pub fn new(domain_id: u32, num_identities: usize, features: Tensor, identities: Vec<usize>) -> Result<Self> {
        if features.rows() != identities.len() {
            return Err(Error::Shape(format!(
                "{} feature rows, {} labels",
                features.rows(),
                identities.len()
            )));
        }
        if let Some(&bad) = identities.iter().find(|&&i| i >= num_identities) {
            return Err(Error::Index(format!(
                "identity {bad} outside [0, {num_identities})"
            )));
        }
        Ok(Self {
            domain_id,
            num_identities,
            features,
            identities,
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            features: self.features.row(i).to_vec(),
            identity: self.identities[i],
            domain: self.domain_id,
            index: i,
        }
    }

    /// Sample indices grouped by identity; entry `i` lists identity `i`.
    pub fn indices_by_identity(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_identities];
        for (idx, &id) in self.identities.iter().enumerate() {
            groups[id].push(idx);
        }
        groups
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.identities[i]).collect(),
            indices: indices.to_vec(),
        }
    }
}

/// Rows drawn from a dataset, with their labels and source positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `num_identities × input_dim` standard-normal identity latents.
pub fn draw_identity_latents<R: Rng + ?Sized>(num_identities: usize, input_dim: usize, rng: &mut R) -> Tensor {
    let values = (0..num_identities * input_dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::matrix(num_identities, input_dim, values).expect("sized above")
}

/// Identity latents confined to the column span of `basis` (`d_in × r`):
/// `latent = basis · u`, `u ~ N(0, I_r)`.
pub fn draw_subspace_latents<R: Rng + ?Sized>(num_identities: usize, basis: &Tensor, rng: &mut R) -> Tensor {
    let coords = draw_identity_latents(num_identities, basis.cols(), rng);
    coords.matmul_t(basis).expect("coordinates match the basis rank")
}

/// A random `d_in × rank` basis with `N(0, 1/rank)` entries, so latents
/// drawn through it have unit variance per channel.
pub fn draw_latent_basis<R: Rng + ?Sized>(input_dim: usize, rank: usize, rng: &mut R) -> Tensor {
    let scale = 1.0 / (rank as f64).sqrt();
    let mut basis = draw_identity_latents(input_dim, rank, rng);
    basis.scale(scale);
    basis
}

/// Renders a domain from explicit identity latents (one row per identity).
pub fn generate_domain(spec: &DomainSpec, latents: &Tensor) -> Result<DomainDataset> {
    spec.validate()?;
    let d = spec.input_dim();
    if latents.cols() != d {
        return Err(Error::Shape(format!(
            "latents have dimension {}, domain expects {d}",
            latents.cols()
        )));
    }
    if latents.rows() < spec.num_identities {
        return Err(Error::Shape(format!(
            "{} latents for {} identities",
            latents.rows(),
            spec.num_identities
        )));
    }
    let mut rng = rng_from_seed(derive_seed(spec.seed, 0xda7a));
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
    let n = spec.num_identities * spec.samples_per_identity;
    let mut values = Vec::with_capacity(n * d);
    let mut identities = Vec::with_capacity(n);
    for id in 0..spec.num_identities {
        let z = latents.row(id);
        for _ in 0..spec.samples_per_identity {
            for c in 0..d {
                let eps = noise.sample(&mut rng);
                values.push(spec.style_scale[c] * (z[c] + eps) + spec.style_shift[c]);
            }
            identities.push(id);
        }
    }
    DomainDataset::new(
        spec.domain_id,
        spec.num_identities,
        Tensor::matrix(n, d, values)?,
        identities,
    )
}

/// Renders a domain with its own standard-normal latents drawn from
/// `spec.seed`.
pub fn generate_domain_independent(spec: &DomainSpec) -> Result<DomainDataset> {
    let mut rng = rng_from_seed(derive_seed(spec.seed, 0x1a7e));
    let latents = draw_identity_latents(spec.num_identities, spec.input_dim(), &mut rng);
    generate_domain(spec, &latents)
}

/// Like [`generate_domain_independent`] but with latents confined to a
/// shared subspace (see [`draw_subspace_latents`]).
pub fn generate_domain_in_subspace(spec: &DomainSpec, basis: &Tensor) -> Result<DomainDataset> {
    if basis.rows() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "latent basis has {} rows, domain expects {}",
            basis.rows(),
            spec.input_dim()
        )));
    }
    let mut rng = rng_from_seed(derive_seed(spec.seed, 0x1a7e));
    let latents = draw_subspace_latents(spec.num_identities, basis, &mut rng);
    generate_domain(spec, &latents)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleTransformConfig {
    /// Interpolation weight toward the randomly drawn style statistics.
    pub mix_alpha: f64,
    /// Probability that a batch is degraded by identity-destroying noise.
    pub degrade_prob: f64,
    pub degrade_sigma: f64,
    /// Spread of the random target means, `N(0, spread²)` per channel.
    pub style_mean_spread: f64,
    /// Spread of the random target log-stds, `exp(N(0, spread²))` per channel.
    pub style_log_std_spread: f64,
}

impl Default for StyleTransformConfig {
    fn default() -> Self {
        Self {
            mix_alpha: 1.0,
            degrade_prob: 0.05,
            degrade_sigma: 3.0,
            style_mean_spread: 1.0,
            style_log_std_spread: 0.4,
        }
    }
}

impl StyleTransformConfig {
    pub fn identity() -> Self {
        Self {
            mix_alpha: 0.0,
            degrade_prob: 0.0,
            degrade_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mix_alpha == 0.0 && (self.degrade_prob == 0.0 || self.degrade_sigma == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mix_alpha", self.mix_alpha), ("degrade_prob", self.degrade_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("degrade_sigma", self.degrade_sigma),
            ("style_mean_spread", self.style_mean_spread),
            ("style_log_std_spread", self.style_log_std_spread),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Result of [`style_transform`]: the stylized rows and whether the batch
/// was hit by a degradation event.
#[derive(Debug, Clone, PartialEq)]
pub struct Stylized {
    pub features: Tensor,
    pub degraded: bool,
}

/// Re-styles a batch by swapping its per-feature statistics.
///
/// Each column is standardized with the batch mean and standard deviation,
/// then re-scaled with statistics interpolated (by `mix_alpha`) toward a
/// random style. With probability `degrade_prob` the whole batch also gets
/// `N(0, degrade_sigma²)` noise. Row order, and hence labels, are preserved.
pub fn style_transform<R: Rng + ?Sized>(batch: &Tensor, cfg: &StyleTransformConfig, rng: &mut R) -> Result<Stylized> {
    let (b, d) = (batch.rows(), batch.cols());
    let mut out = batch.clone();

    if cfg.mix_alpha > 0.0 {
        if b < 2 {
            return Err(Error::BatchStatistics(b));
        }
        let alpha = cfg.mix_alpha;
        for c in 0..d {
            let mean = (0..b).map(|r| batch.get(r, c)).sum::<f64>() / b as f64;
            let var = (0..b).map(|r| (batch.get(r, c) - mean).powi(2)).sum::<f64>() / b as f64;
            let std = (var + STAT_EPS).sqrt();
            let z_mu: f64 = StandardNormal.sample(rng);
            let z_sig: f64 = StandardNormal.sample(rng);
            let new_mean = (1.0 - alpha) * mean + alpha * z_mu * cfg.style_mean_spread;
            let new_std = (1.0 - alpha) * std + alpha * (z_sig * cfg.style_log_std_spread).exp();
            for r in 0..b {
                let v = (batch.get(r, c) - mean) / std;
                out.set(r, c, new_std * v + new_mean);
            }
        }
    }

    let degraded = cfg.degrade_prob > 0.0 && rng.random::<f64>() < cfg.degrade_prob;
    if degraded && cfg.degrade_sigma > 0.0 {
        for v in out.values_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += cfg.degrade_sigma * z;
        }
    }
    out.ensure_finite("style transform")?;
    Ok(Stylized {
        features: out,
        degraded,
    })
}

/// Draws `p` distinct identities and `k` distinct samples of each.
pub fn sample_pk_batch<R: Rng + ?Sized>(dataset: &DomainDataset, p: usize, k: usize, rng: &mut R) -> Result<Batch> {
    if p == 0 || k == 0 {
        return Err(Error::Sampling(format!("P = {p}, K = {k} must both be positive")));
    }
    let groups = dataset.indices_by_identity();
    let eligible: Vec<usize> = (0..groups.len()).filter(|&i| groups[i].len() >= k).collect();
    if eligible.len() < p {
        return Err(Error::Sampling(format!(
            "need {p} identities with at least {k} samples, domain {} has {}",
            dataset.domain_id,
            eligible.len()
        )));
    }
    let mut indices = Vec::with_capacity(p * k);
    for pick in index::sample(rng, eligible.len(), p) {
        let members = &groups[eligible[pick]];
        indices.extend(index::sample(rng, members.len(), k).into_iter().map(|j| members[j]));
    }
    Ok(dataset.batch(&indices))
}

/// Disjoint query and gallery sample lists for retrieval evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGallerySplit {
    pub queries: Vec<Sample>,
    pub gallery: Vec<Sample>,
}

impl QueryGallerySplit {
    pub fn query_features(&self) -> Result<Tensor> {
        samples_to_tensor(&self.queries)
    }

    pub fn gallery_features(&self) -> Result<Tensor> {
        samples_to_tensor(&self.gallery)
    }
}

fn samples_to_tensor(samples: &[Sample]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    Tensor::from_rows(&rows)
}

/// Splits every identity's samples into queries and gallery.
///
/// Each identity contributes `round(n · query_fraction)` queries, clamped to
/// `[1, n - 1]` when the fraction is positive, so every identity keeps at
/// least one gallery sample.
pub fn make_query_gallery_split<R: Rng + ?Sized>(
    dataset: &DomainDataset,
    query_fraction: f64,
    rng: &mut R,
) -> Result<QueryGallerySplit> {
    if !(0.0..1.0).contains(&query_fraction) {
        return Err(Error::Split(format!(
            "query fraction must lie in [0, 1), got {query_fraction}"
        )));
    }
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for (id, mut members) in dataset.indices_by_identity().into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Split(format!(
                "identity {id} of domain {} has {} samples, need 2",
                dataset.domain_id,
                members.len()
            )));
        }
        members.shuffle(rng);
        let n = members.len();
        let n_query = if query_fraction > 0.0 {
            ((n as f64 * query_fraction).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        queries.extend(members[..n_query].iter().map(|&i| dataset.sample(i)));
        gallery.extend(members[n_query..].iter().map(|&i| dataset.sample(i)));
    }
    queries.sort_by_key(|s| s.index);
    gallery.sort_by_key(|s| s.index);
    Ok(QueryGallerySplit { queries, gallery })
}

/// Writes datasets as CSV with header `domain,identity,f0..f{d-1}`.
///
/// Values use Rust's shortest round-trip formatting, so an import restores
/// every bit.
pub fn write_csv<W: Write>(datasets: &[DomainDataset], mut out: W) -> Result<()> {
    let d = datasets.first().map_or(0, DomainDataset::input_dim);
    let mut header = String::from("domain,identity");
    for c in 0..d {
        header.push_str(&format!(",f{c}"));
    }
    writeln!(out, "{header}")?;
    for ds in datasets {
        if ds.input_dim() != d {
            return Err(Error::Shape("datasets disagree on feature width".into()));
        }
        for i in 0..ds.len() {
            let mut line = format!("{},{}", ds.domain_id, ds.identities[i]);
            for v in ds.features.row(i) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Reads datasets written by [`write_csv`], grouped by domain in order of
/// first appearance. Identity counts are inferred as `max identity + 1`.
pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<DomainDataset>> {
    let bad = |line: usize, message: String| Error::Format {
        what: "dataset CSV",
        message: format!("line {line}: {message}"),
    };
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "domain" || cols[1] != "identity" {
        return Err(bad(1, format!("unexpected header {header:?}")));
    }
    for (c, name) in cols[2..].iter().enumerate() {
        if *name != format!("f{c}") {
            return Err(bad(1, format!("expected column f{c}, found {name}")));
        }
    }
    let d = cols.len() - 2;

    let mut order = Vec::new();
    let mut rows: BTreeMap<u32, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let lineno = n + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d + 2 {
            return Err(bad(lineno, format!("expected {} fields, got {}", d + 2, fields.len())));
        }
        let domain: u32 = fields[0]
            .parse()
            .map_err(|e| bad(lineno, format!("domain: {e}")))?;
        let identity: usize = fields[1]
            .parse()
            .map_err(|e| bad(lineno, format!("identity: {e}")))?;
        let entry = rows.entry(domain).or_insert_with(|| {
            order.push(domain);
            (Vec::new(), Vec::new())
        });
        for f in &fields[2..] {
            let v: f64 = f.parse().map_err(|e| bad(lineno, format!("value {f:?}: {e}")))?;
            entry.0.push(v);
        }
        entry.1.push(identity);
    }
    order
        .into_iter()
        .map(|domain| {
            let (values, ids) = rows.remove(&domain).expect("recorded above");
            let p = ids.iter().max().map_or(0, |m| m + 1);
            DomainDataset::new(domain, p, Tensor::matrix(ids.len(), d, values)?, ids)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn spec(noise: f64) -> DomainSpec {
        DomainSpec {
            domain_id: 3,
            num_identities: 5,
            samples_per_identity: 4,
            style_scale: vec![1.0; 6],
            style_shift: vec![0.0; 6],
            noise_sigma: noise,
            seed: 42,
        }
    }

    #[test]
    fn noiseless_unit_style_reproduces_latents() {
        let s = spec(0.0);
        let latents = draw_identity_latents(5, 6, &mut rng_from_seed(1));
        let ds = generate_domain(&s, &latents).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.features.row(i), latents.row(ds.identities[i]));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(0.3);
        assert_eq!(
            generate_domain_independent(&s).unwrap(),
            generate_domain_independent(&s).unwrap()
        );
    }

    #[test]
    fn too_few_identities_rejected() {
        let mut s = spec(0.1);
        s.num_identities = 1;
        let latents = draw_identity_latents(1, 6, &mut rng_from_seed(1));
        assert!(matches!(generate_domain(&s, &latents), Err(Error::Config(_))));
    }

    #[test]
    fn identity_transform_is_exact() {
        let ds = generate_domain_independent(&spec(0.5)).unwrap();
        let out = style_transform(&ds.features, &StyleTransformConfig::identity(), &mut rng_from_seed(9)).unwrap();
        assert_eq!(out.features, ds.features);
        assert!(!out.degraded);
    }

    #[test]
    fn mixing_needs_two_rows() {
        let cfg = StyleTransformConfig::default();
        let one = Tensor::zeros(&[1, 4]);
        assert!(matches!(
            style_transform(&one, &cfg, &mut rng_from_seed(0)),
            Err(Error::BatchStatistics(1))
        ));
    }

    #[test]
    fn transform_repeats_under_fixed_seed() {
        let ds = generate_domain_independent(&spec(0.5)).unwrap();
        let cfg = StyleTransformConfig {
            degrade_prob: 0.5,
            ..StyleTransformConfig::default()
        };
        let a = style_transform(&ds.features, &cfg, &mut rng_from_seed(5)).unwrap();
        let b = style_transform(&ds.features, &cfg, &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pk_batch_shape() {
        let ds = generate_domain_independent(&spec(0.5)).unwrap();
        let b = sample_pk_batch(&ds, 4, 4, &mut rng_from_seed(2)).unwrap();
        assert_eq!(b.len(), 16);
        let mut counts = BTreeMap::new();
        for &l in &b.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 4));
        let full = sample_pk_batch(&ds, 5, 2, &mut rng_from_seed(2)).unwrap();
        let ids: std::collections::BTreeSet<_> = full.labels.iter().collect();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn pk_batch_infeasible() {
        let ds = generate_domain_independent(&spec(0.5)).unwrap();
        assert!(matches!(
            sample_pk_batch(&ds, 6, 2, &mut rng_from_seed(2)),
            Err(Error::Sampling(_))
        ));
        assert!(matches!(
            sample_pk_batch(&ds, 2, 5, &mut rng_from_seed(2)),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn forced_split_and_boundary() {
        let mut s = spec(0.5);
        s.samples_per_identity = 2;
        let ds = generate_domain_independent(&s).unwrap();
        let split = make_query_gallery_split(&ds, 0.5, &mut rng_from_seed(3)).unwrap();
        assert_eq!(split.queries.len(), 5);
        assert_eq!(split.gallery.len(), 5);
        let split = make_query_gallery_split(&ds, 0.0, &mut rng_from_seed(3)).unwrap();
        assert!(split.queries.is_empty());
        assert_eq!(split.gallery.len(), ds.len());
    }

    #[test]
    fn split_rejects_singleton_identity() {
        let ds = DomainDataset::new(
            0,
            2,
            Tensor::zeros(&[3, 2]),
            vec![0, 0, 1],
        )
        .unwrap();
        assert!(matches!(
            make_query_gallery_split(&ds, 0.3, &mut rng_from_seed(0)),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let a = generate_domain_independent(&spec(0.7)).unwrap();
        let mut b_spec = spec(0.2);
        b_spec.domain_id = 9;
        b_spec.seed = 7;
        let b = generate_domain_independent(&b_spec).unwrap();
        let mut buf = Vec::new();
        write_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("domain,identity,f0,f1,f2,f3,f4,f5\n"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let text = "domain,identity,f0,f1\n0,0,1.0\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Format { .. })));
    }
}

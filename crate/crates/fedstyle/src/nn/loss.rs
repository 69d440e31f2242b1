use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Distances below this are clamped inside the triplet loss so the gradient
/// of `sqrt` stays finite for coincident points.
const DIST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Softmax temperature of the memory recognition loss.
    pub temperature: f64,
    pub triplet_margin: f64,
    pub label_smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.3,
            triplet_margin: 0.3,
            label_smoothing: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.triplet_margin >= 0.0) {
            return Err(Error::Config(format!(
                "triplet margin must be non-negative, got {}",
                self.triplet_margin
            )));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing must lie in [0, 0.5), got {}",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            rows
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Index(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// Numerically stable log-softmax of one row, in place.
fn log_softmax(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v -= lse);
}

/// Mean softmax cross-entropy with optional label smoothing.
///
/// Returns the loss and its exact gradient with respect to the logits.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize], label_smoothing: f64) -> Result<(f64, Tensor)> {
    let (b, p) = (logits.rows(), logits.cols());
    check_labels(labels, b, p)?;
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let off = label_smoothing / p as f64;
    let on = 1.0 - label_smoothing + off;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        log_softmax(row);
        for (c, v) in row.iter_mut().enumerate() {
            let target = if c == y { on } else { off };
            loss -= target * *v;
            *v = (v.exp() - target) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// Batch-hard triplet loss on Euclidean distances.
///
/// Every anchor is paired with its farthest same-identity sample and its
/// closest other-identity sample; the loss is the mean hinge
/// `max(0, d_ap - d_an + margin)`. Ties pick the lowest batch index.
pub fn triplet_loss(features: &Tensor, labels: &[usize], margin: f64) -> Result<(f64, Tensor)> {
    let b = features.rows();
    check_labels(labels, b, usize::MAX)?;
    check_pk_batch(labels)?;

    let mut dist = vec![0.0; b * b];
    for i in 0..b {
        for j in (i + 1)..b {
            let sq: f64 = features
                .row(i)
                .iter()
                .zip(features.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            let d = sq.max(DIST_EPS).sqrt();
            dist[i * b + j] = d;
            dist[j * b + i] = d;
        }
    }

    let mut grad = Tensor::zeros(features.shape());
    let mut loss = 0.0;
    let scale = 1.0 / b as f64;
    for a in 0..b {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..b {
            if j == a {
                continue;
            }
            let d = dist[a * b + j];
            if labels[j] == labels[a] {
                if pos.is_none_or(|(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.is_none_or(|(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        let ((p, d_ap), (n, d_an)) = (pos.expect("PK checked"), neg.expect("PK checked"));
        let hinge = d_ap - d_an + margin;
        if hinge <= 0.0 {
            continue;
        }
        loss += hinge;
        let d = features.cols();
        for c in 0..d {
            let fa = features.get(a, c);
            let gp = (fa - features.get(p, c)) / d_ap * scale;
            let gn = (fa - features.get(n, c)) / d_an * scale;
            let g = grad.values_mut();
            g[a * d + c] += gp - gn;
            g[p * d + c] -= gp;
            g[n * d + c] += gn;
        }
    }
    Ok((loss * scale, grad))
}

/// Batch-hard mining needs at least two identities and at least two samples
/// of every identity present.
pub fn check_pk_batch(labels: &[usize]) -> Result<()> {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Sampling(format!(
            "batch has {} identities, need at least 2",
            counts.len()
        )));
    }
    if let Some((id, _)) = counts.iter().find(|(_, &n)| n < 2) {
        return Err(Error::Sampling(format!(
            "identity {id} has a single instance in the batch"
        )));
    }
    Ok(())
}

/// Memory recognition loss: softmax over dot-product similarities between
/// each feature and every prototype row, scaled by `1 / temperature`.
///
/// Prototypes are treated as constants; only the feature gradient is
/// returned.
pub fn recognition_loss(
    features: &Tensor,
    labels: &[usize],
    prototypes: &Tensor,
    temperature: f64,
) -> Result<(f64, Tensor)> {
    if !(temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let (b, d) = (features.rows(), features.cols());
    if prototypes.cols() != d {
        return Err(Error::Shape(format!(
            "features have {d} columns, prototypes {}",
            prototypes.cols()
        )));
    }
    check_labels(labels, b, prototypes.rows())?;
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }

    let mut grad = Tensor::zeros(features.shape());
    let mut loss = 0.0;
    let mut logits = vec![0.0; prototypes.rows()];
    for (r, &y) in labels.iter().enumerate() {
        let f = features.row(r);
        for (n, l) in logits.iter_mut().enumerate() {
            *l = dot(f, prototypes.row(n)) / temperature;
        }
        log_softmax(&mut logits);
        loss -= logits[y];
        let g = grad.row_mut(r);
        for (n, &lp) in logits.iter().enumerate() {
            let coef = (lp.exp() - if n == y { 1.0 } else { 0.0 }) / (temperature * b as f64);
            for (gv, mv) in g.iter_mut().zip(prototypes.row(n)) {
                *gv += coef * mv;
            }
        }
    }
    Ok((loss / b as f64, grad))
}

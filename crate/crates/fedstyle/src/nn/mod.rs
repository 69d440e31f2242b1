//! Small fully connected networks with hand-written backward passes.
//!
//! The encoder is a stack of affine layers with a nonlinearity between
//! consecutive layers (never after the last one). Gradients are exact and
//! are checked against central finite differences in the test suite.

mod loss;
mod optim;

pub use loss::{cross_entropy_loss, recognition_loss, triplet_loss, LossConfig};
pub use optim::{lr_at_epoch, lr_schedule, sgd_step, OptimizerConfig, OptimizerState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{norm, Tensor};

/// Rows with a Euclidean norm at or below this are rejected by [`l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Anything the optimizer can update: an ordered list of parameter tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `d_out × d_in`
    pub weight: Tensor,
    /// `d_out`
    pub bias: Tensor,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "layer weight {:?} incompatible with bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    fn affine(&self, input: &Tensor) -> Result<Tensor> {
        let mut z = input.matmul_t(&self.weight)?;
        let b = self.bias.values();
        for r in 0..z.rows() {
            for (v, bb) in z.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Intermediate values kept by [`EncoderParams::forward_cached`] for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the batch itself for layer 0).
    inputs: Vec<Tensor>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Tensor>,
}

impl EncoderParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("encoder needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].d_in() != pair[0].d_out() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].d_out(),
                    i + 1,
                    pair[1].d_in()
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Xavier-uniform weights, zero biases. `dims` lists every width from
    /// input to output, e.g. `[16, 64, 32]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid encoder dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let bound = (6.0 / (d_in + d_out) as f64).sqrt();
                let values = (0..d_in * d_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer::new(
                    Tensor::matrix(d_out, d_in, values)?,
                    Tensor::zeros(&[d_out]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            activation: self.activation,
        }
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward_cached(batch).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, encoder expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = batch.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&h)?;
            inputs.push(h);
            if l == last {
                h = z;
            } else {
                let mut out = z.clone();
                out.values_mut()
                    .iter_mut()
                    .for_each(|v| *v = self.activation.apply(*v));
                pre.push(z);
                h = out;
            }
        }
        h.ensure_finite("encoder forward")?;
        Ok((h, ForwardCache { inputs, pre }))
    }

    /// Parameter gradients for an upstream gradient `grad_out` on the
    /// encoder output.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Result<EncoderParams> {
        self.backward_with_input(cache, grad_out).map(|(g, _)| g)
    }

    /// Like [`backward`](Self::backward) but also returns the gradient with
    /// respect to the encoder input.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        grad_out: &Tensor,
    ) -> Result<(EncoderParams, Tensor)> {
        let last = self.layers.len() - 1;
        let mut grads = self.zeros_like();
        let mut upstream = grad_out.clone();
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let mut dz = upstream;
            if l != last {
                // cache.inputs[l + 1] holds this layer's activated output
                let z = &cache.pre[l];
                let h = &cache.inputs[l + 1];
                for ((g, &zv), &hv) in dz.values_mut().iter_mut().zip(z.values()).zip(h.values()) {
                    *g *= self.activation.derivative(zv, hv);
                }
            }
            grads.layers[l].weight = dz.t_matmul(&cache.inputs[l])?;
            let mut db = vec![0.0; layer.d_out()];
            for r in dz.iter_rows() {
                for (d, v) in db.iter_mut().zip(r) {
                    *d += v;
                }
            }
            grads.layers[l].bias = Tensor::vector(db);
            upstream = dz.matmul(&layer.weight)?;
        }
        Ok((grads, upstream))
    }

    /// Deterministic fingerprint of every parameter bit.
    pub fn checksum(&self) -> String {
        crate::checkpoint::digest_tensors(self.tensors())
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Linear identity classifier `cls_k` kept on the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// `P_k × d`
    pub weight: Tensor,
    /// `P_k`
    pub bias: Tensor,
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(num_classes: usize, dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (num_classes + dim) as f64).sqrt();
        let values = (0..num_classes * dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::matrix(num_classes, dim, values).expect("sized above"),
            bias: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let layer = Layer {
            weight: self.weight.clone(),
            bias: self.bias.clone(),
        };
        layer.affine(features)
    }

    /// Returns `(parameter gradients, gradient w.r.t. features)`.
    pub fn backward(&self, features: &Tensor, grad_logits: &Tensor) -> Result<(ClassifierParams, Tensor)> {
        let weight = grad_logits.t_matmul(features)?;
        let mut db = vec![0.0; self.num_classes()];
        for r in grad_logits.iter_rows() {
            for (d, v) in db.iter_mut().zip(r) {
                *d += v;
            }
        }
        let grad_features = grad_logits.matmul(&self.weight)?;
        Ok((
            ClassifierParams {
                weight,
                bias: Tensor::vector(db),
            },
            grad_features,
        ))
    }
}

impl Parameters for ClassifierParams {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    let mut out = v.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if !(n > MIN_NORM) {
            return Err(Error::Degenerate(format!(
                "row {r} has norm {n:e}, cannot normalize"
            )));
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}

/// Backward pass of [`l2_normalize`]: for `y = x / |x|`,
/// `dx = (g - y (y·g)) / |x|`.
pub fn l2_normalize_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if !input.same_shape(grad_out) {
        return Err(Error::Shape("normalize backward shape mismatch".into()));
    }
    let mut grad = grad_out.clone();
    for r in 0..input.rows() {
        let x = input.row(r);
        let n = norm(x);
        if !(n > MIN_NORM) {
            return Err(Error::Degenerate(format!("row {r} has norm {n:e}")));
        }
        let g = grad.row_mut(r);
        let yg: f64 = x.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        for (gv, &xv) in g.iter_mut().zip(x) {
            *gv = (*gv - xv / n * yg) / n;
        }
    }
    Ok(grad)
}

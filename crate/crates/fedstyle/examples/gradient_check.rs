//! Compares every hand-written backward pass with central finite
//! differences and prints the worst relative error.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use fedstyle::nn::{
    cross_entropy_loss, l2_normalize, l2_normalize_backward, recognition_loss, triplet_loss, Activation,
    EncoderParams, Parameters,
};
use fedstyle::rng::rng_from_seed;
use fedstyle::Tensor;
use rand_distr::{Distribution, StandardNormal};

const H: f64 = 1e-5;

fn randn(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
}

fn numeric(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
    let mut g = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let v = probe.values()[i];
        probe.values_mut()[i] = v + H;
        let up = f(&probe);
        probe.values_mut()[i] = v - H;
        let down = f(&probe);
        probe.values_mut()[i] = v;
        g.values_mut()[i] = (up - down) / (2.0 * H);
    }
    g
}

fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn main() -> fedstyle::Result<()> {
    let labels = [0, 0, 1, 1, 2, 2];

    let logits = randn(6, 4, 1);
    let (_, g) = cross_entropy_loss(&logits, &labels, 0.1)?;
    let n = numeric(&logits, |l| cross_entropy_loss(l, &labels, 0.1).unwrap().0);
    println!("cross entropy      max rel err {:.2e}", rel_err(&g, &n));

    let feats = randn(6, 5, 2);
    let (_, g) = triplet_loss(&feats, &labels, 1.0)?;
    let n = numeric(&feats, |f| triplet_loss(f, &labels, 1.0).unwrap().0);
    println!("batch-hard triplet max rel err {:.2e}", rel_err(&g, &n));

    let protos = l2_normalize(&randn(3, 5, 3))?;
    let raw = randn(6, 5, 4);
    let objective = |x: &Tensor| recognition_loss(&l2_normalize(x).unwrap(), &labels, &protos, 0.05).unwrap();
    let (_, dunit) = objective(&raw);
    let g = l2_normalize_backward(&raw, &dunit)?;
    let n = numeric(&raw, |x| objective(x).0);
    println!("memory recognition max rel err {:.2e}", rel_err(&g, &n));

    let enc = EncoderParams::init(&[5, 8, 3], Activation::Tanh, &mut rng_from_seed(5))?;
    let x = randn(4, 5, 6);
    let upstream = randn(4, 3, 7);
    let inner = |e: &EncoderParams| -> f64 {
        let out = e.forward(&x).unwrap();
        out.values().iter().zip(upstream.values()).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = enc.forward_cached(&x)?;
    let grads = enc.backward(&cache, &upstream)?;
    let mut worst: f64 = 0.0;
    for (t, analytic) in grads.tensors().into_iter().enumerate() {
        let n = numeric(enc.tensors()[t], |p| {
            let mut e = enc.clone();
            *e.tensors_mut()[t] = p.clone();
            inner(&e)
        });
        worst = worst.max(rel_err(analytic, &n));
    }
    println!("encoder backward   max rel err {worst:.2e}");
    Ok(())
}

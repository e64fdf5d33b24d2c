//! Minibatch SGD with momentum for the pendulum regressors and the MNIST
//! classifiers.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::{LabeledDataset, Targets};
use crate::error::{Error, Result};
use crate::network::{argmax, log_softmax, softmax, Layer, Matrix, Network};
use crate::specs::EnergyParams;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const PENDULUM_LEARNING_RATE: f64 = 0.01;
/// The energy terms are measured in joules and dominate the ℓ1 gradient.
pub const PENDULUM_ENERGY_LEARNING_RATE: f64 = 0.003;
pub const MNIST_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_ADV_STEPS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    L1,
    /// `‖f(x) − t‖₁ + |E(f(x)) − E(t)| + ReLU(E(f(x)) − E(x))`.
    L1PlusEnergy(EnergyParams),
    CrossEntropy,
    /// Cross-entropy at a PGD adversary inside the `delta` box (pixels clamped to `[0, 1]`).
    CrossEntropyAdversarial { delta: f64, steps: usize },
}

impl LossKind {
    pub fn default_learning_rate(&self) -> f64 {
        match self {
            LossKind::L1 => PENDULUM_LEARNING_RATE,
            LossKind::L1PlusEnergy(_) => PENDULUM_ENERGY_LEARNING_RATE,
            LossKind::CrossEntropy | LossKind::CrossEntropyAdversarial { .. } => MNIST_LEARNING_RATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let LossKind::CrossEntropyAdversarial { delta, steps } = self.kind {
            if !(delta >= 0.0 && delta.is_finite()) || steps == 0 {
                return Err(Error::Config("adversarial training needs delta >= 0 and steps >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Target of one training sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target<'a> {
    Class(usize),
    Vector(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub target: Target<'a>,
}

pub fn samples(ds: &LabeledDataset) -> Vec<Sample<'_>> {
    match &ds.targets {
        Targets::Classes(c) => ds
            .inputs
            .iter()
            .zip(c)
            .map(|(x, &l)| Sample {
                input: x,
                target: Target::Class(l),
            })
            .collect(),
        Targets::Vectors(v) => ds
            .inputs
            .iter()
            .zip(v)
            .map(|(x, t)| Sample {
                input: x,
                target: Target::Vector(t),
            })
            .collect(),
    }
}

/// Fully connected ReLU network with weights and biases drawn from
/// `U(±1/√fan_in)`.
pub fn init_network(name: &str, dims: &[usize], seed: u64) -> Result<Network> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config("network needs at least an input and an output width".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for w in dims.windows(2) {
        let bound = 1.0 / (w[0] as f64).sqrt();
        let mut m = Matrix::zeros(w[1], w[0]);
        m.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        let b = (0..w[1]).map(|_| rng.gen_range(-bound..bound)).collect();
        layers.push(Layer::affine(m, b));
        layers.push(Layer::Relu);
    }
    layers.pop();
    Network::new(name, dims[0], layers)
}

/// All weights and biases, layer by layer (weights row-major, then bias).
pub fn parameters(net: &Network) -> Vec<f64> {
    let mut out = Vec::with_capacity(net.param_count());
    for layer in net.layers() {
        if let Layer::Affine { weight, bias } = layer {
            out.extend_from_slice(weight.as_slice());
            out.extend_from_slice(bias);
        }
    }
    out
}

pub fn set_parameters(net: &mut Network, params: &[f64]) -> Result<()> {
    if params.len() != net.param_count() {
        return Err(Error::InputShape(format!(
            "expected {} parameters, got {}",
            net.param_count(),
            params.len()
        )));
    }
    let mut offset = 0;
    for layer in net.layers_mut() {
        if let Layer::Affine { weight, bias } = layer {
            let n = weight.as_slice().len();
            weight.as_mut_slice().copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let m = bias.len();
            bias.copy_from_slice(&params[offset..offset + m]);
            offset += m;
        }
    }
    Ok(())
}

/// Loss of one output and its gradient with respect to that output.
fn output_loss(kind: &LossKind, x: &[f64], y: &[f64], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
    match (kind, target) {
        (LossKind::L1, Target::Vector(t)) => Ok(l1(y, t)),
        (LossKind::L1PlusEnergy(e), Target::Vector(t)) => {
            let (mut loss, mut g) = l1(y, t);
            let (ey, et, ex) = (e.energy(y), e.energy(t), e.energy(x));
            let grad_e = e.energy_gradient(y);
            let mut coeff = sign(ey - et);
            loss += (ey - et).abs();
            if ey > ex {
                loss += ey - ex;
                coeff += 1.0;
            }
            for (gi, de) in g.iter_mut().zip(grad_e) {
                *gi += coeff * de;
            }
            Ok((loss, g))
        }
        (LossKind::CrossEntropy | LossKind::CrossEntropyAdversarial { .. }, Target::Class(label)) => {
            if label >= y.len() {
                return Err(Error::InputShape(format!("label {label} outside {} classes", y.len())));
            }
            let lp = log_softmax(y)?;
            let mut g = softmax(y)?;
            g[label] -= 1.0;
            Ok((-lp[label], g))
        }
        _ => Err(Error::Config("loss kind does not match the dataset targets".into())),
    }
}

fn l1(y: &[f64], t: &[f64]) -> (f64, Vec<f64>) {
    let loss = y.iter().zip(t).map(|(a, b)| (a - b).abs()).sum();
    (loss, y.iter().zip(t).map(|(a, b)| sign(a - b)).collect())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Accumulates `scale · ∂loss/∂θ` for one sample into `grad`.
fn backprop_params(net: &Network, trace: &[Vec<f64>], grad_out: &[f64], scale: f64, grad: &mut [f64]) {
    // parameter offsets per layer
    let mut offsets = Vec::with_capacity(net.layers().len());
    let mut offset = 0;
    for layer in net.layers() {
        offsets.push(offset);
        if let Layer::Affine { weight, bias } = layer {
            offset += weight.as_slice().len() + bias.len();
        }
    }
    let mut g = grad_out.to_vec();
    for (k, layer) in net.layers().iter().enumerate().rev() {
        match layer {
            Layer::Affine { weight, .. } => {
                let x = &trace[k];
                let (rows, cols) = (weight.rows(), weight.cols());
                let base = offsets[k];
                for i in 0..rows {
                    if g[i] == 0.0 {
                        continue;
                    }
                    let gi = scale * g[i];
                    let row = &mut grad[base + i * cols..base + (i + 1) * cols];
                    for (r, xv) in row.iter_mut().zip(x) {
                        *r += gi * xv;
                    }
                    grad[base + rows * cols + i] += gi;
                }
                if k > 0 {
                    g = weight.mul_transpose_vec(&g);
                }
            }
            Layer::Relu => {
                for (gi, pre) in g.iter_mut().zip(&trace[k]) {
                    if *pre <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
        }
    }
}

/// PGD maximizing cross-entropy inside the clamped `delta` box around each
/// input: sign steps of `2.5·delta/steps`, starting at the clean input.
pub fn adversarial_batch(net: &Network, batch: &[Sample<'_>], delta: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let eta = 2.5 * delta / steps as f64;
    batch
        .iter()
        .map(|s| {
            let Target::Class(label) = s.target else {
                return Err(Error::Config("adversarial training needs class labels".into()));
            };
            let mut x = s.input.to_vec();
            if delta == 0.0 {
                return Ok(x);
            }
            for _ in 0..steps {
                let trace = net.forward_trace(&x)?;
                let y = trace.last().expect("nonempty");
                let (_, gy) = output_loss(&LossKind::CrossEntropy, &x, y, Target::Class(label))?;
                let gx = net.backprop_input(&trace, &gy);
                for ((xi, gi), x0) in x.iter_mut().zip(&gx).zip(s.input) {
                    *xi = (*xi + eta * sign(*gi)).clamp(x0 - delta, x0 + delta).clamp(0.0, 1.0);
                }
            }
            Ok(x)
        })
        .collect()
}

/// Mean loss over the batch and its gradient with respect to
/// [`parameters`].
pub fn loss_and_grad(net: &Network, batch: &[Sample<'_>], kind: &LossKind) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let adv = match kind {
        LossKind::CrossEntropyAdversarial { delta, steps } => Some(adversarial_batch(net, batch, *delta, *steps)?),
        _ => None,
    };
    let mut grad = vec![0.0; net.param_count()];
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (i, s) in batch.iter().enumerate() {
        let x = adv.as_ref().map_or(s.input, |a| a[i].as_slice());
        let trace = net.forward_trace(x)?;
        let y = trace.last().expect("nonempty");
        let (loss, gy) = output_loss(kind, s.input, y, s.target)?;
        total += loss;
        backprop_params(net, &trace, &gy, scale, &mut grad);
    }
    Ok((total * scale, grad))
}

/// Mean ℓ1 error for vector targets, accuracy for class targets.
pub fn test_metric(net: &Network, ds: &LabeledDataset) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples(ds) {
        let y = net.forward(s.input)?;
        acc += match s.target {
            Target::Vector(t) => l1(&y, t).0,
            Target::Class(l) => (argmax(&y) == l) as u8 as f64,
        };
    }
    Ok(acc / ds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_metric: f64,
}

pub fn write_log(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("epoch,train_loss,test_metric\n");
    for r in rows {
        text.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.test_metric));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains a copy of `net`; one log row per epoch.
pub fn train(
    net: &Network,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    cfg: &LossConfig,
) -> Result<(Network, Vec<LogRow>)> {
    cfg.validate()?;
    let data = samples(train_set);
    let mut net = net.clone();
    let mut params = parameters(&net);
    let mut velocity = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<'_>> = chunk.iter().map(|&i| data[i]).collect();
            let (loss, grad) = loss_and_grad(&net, &batch, &cfg.kind)?;
            if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: "loss or gradient is not finite".into(),
                });
            }
            epoch_loss += loss * batch.len() as f64;
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            set_parameters(&mut net, &params)?;
        }
        let metric = match test_set {
            Some(t) => test_metric(&net, t)?,
            None => f64::NAN,
        };
        log.push(LogRow {
            epoch,
            train_loss: epoch_loss / data.len() as f64,
            test_metric: metric,
        });
    }
    Ok((net, log))
}

//! A small fully connected classifier with hand-written backpropagation and
//! an SGD trainer.
//!
//! The model computes `f(x) = W_out Φ(x) + b_out`, where `Φ` is a stack of
//! ReLU layers (the identity for a linear model). Layer weights are stored as
//! `out × in` matrices, so row `t` of the output layer is the classifier of
//! class `t`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{gradient_norm_probe, logit_adjusted_weighted_ce, LogitAdjustment, LossSpec, Objective};
use crate::metrics;
use crate::numerics::{l2_norm, Matrix, RngState};

const CHECKPOINT_MAGIC: &str = "labcvar-model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_transposed(&self.weight)?;
        z.add_row_vector(&self.bias)?;
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
}

/// Gradients of every layer, laid out like [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                let w = l.weight.frobenius_norm();
                w * w + l.bias.iter().map(|b| b * b).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Adds `λ θ` for every weight and bias.
    pub fn add_weight_decay(&mut self, model: &MlpModel, lambda: f64) {
        for (g, p) in self.layers.iter_mut().zip(&model.layers) {
            for (gw, pw) in g.weight.as_mut_slice().iter_mut().zip(p.weight.as_slice()) {
                *gw += lambda * pw;
            }
            for (gb, pb) in g.bias.iter_mut().zip(&p.bias) {
                *gb += lambda * pb;
            }
        }
    }
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardCache {
    /// `Φ(x)`: the input of the output layer.
    pub fn features(&self) -> &Matrix {
        self.inputs.last().expect("at least one layer")
    }
}

impl MlpModel {
    /// All-zero model with the given layer widths.
    pub fn zeros(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        MlpModel {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize, rng: &mut RngState) -> Self {
        let mut m = MlpModel::zeros(input_dim, hidden, classes);
        for layer in &mut m.layers {
            let scale = 1.0 / (layer.input_dim() as f64).sqrt();
            for w in layer.weight.as_mut_slice() {
                *w = rng.normal() * scale;
            }
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Dense::output_dim).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.logits)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&h)?;
            if i < last {
                for v in z.as_mut_slice() {
                    *v = v.max(0.0);
                }
            }
            inputs.push(h);
            h = z;
        }
        Ok(ForwardCache { inputs, logits: h })
    }

    /// Parameter gradients given `∂loss/∂logits` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Matrix) -> Result<Gradients> {
        if grad_logits.shape() != cache.logits.shape() {
            return Err(Error::shape("gradient does not match the cached logits"));
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let weight = delta.transposed_matmul(input)?;
            let mut bias = vec![0.0; layer.output_dim()];
            for r in 0..delta.rows() {
                for (b, d) in bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            grads.push(Dense { weight, bias });
            if i > 0 {
                let mut back = delta.matmul(&layer.weight)?;
                // ReLU mask: the input of this layer is the post-activation
                for (g, &a) in back.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = back;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Serializes to the text checkpoint format (see the crate README).
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "layers {}", self.layers.len())?;
        for layer in &self.layers {
            writeln!(w, "dense {} {}", layer.output_dim(), layer.input_dim())?;
            for r in 0..layer.weight.rows() {
                writeln!(w, "{}", join(layer.weight.row(r)))?;
            }
            writeln!(w, "{}", join(&layer.bias))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(s))) => Ok((n, s)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::Parse {
                    line: 0,
                    message: "unexpected end of checkpoint".into(),
                }),
            }
        };
        let perr = |line: usize, m: &str| Error::Parse {
            line,
            message: m.to_string(),
        };
        let (n, magic) = next()?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(perr(n, "not a labcvar model checkpoint"));
        }
        let (n, header) = next()?;
        let count: usize = header
            .strip_prefix("layers ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| perr(n, "expected 'layers <count>'"))?;
        if count == 0 {
            return Err(perr(n, "model has no layers"));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, head) = next()?;
            let dims: Vec<usize> = head
                .strip_prefix("dense ")
                .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
                .unwrap_or_default();
            if dims.len() != 2 {
                return Err(perr(n, "expected 'dense <out> <in>'"));
            }
            let (out, inp) = (dims[0], dims[1]);
            let mut data = Vec::with_capacity(out * inp);
            for _ in 0..out {
                let (n, row) = next()?;
                let vals = parse_row(&row).ok_or_else(|| perr(n, "bad number"))?;
                if vals.len() != inp {
                    return Err(perr(n, "wrong number of weights in row"));
                }
                data.extend(vals);
            }
            let (n, row) = next()?;
            let bias = parse_row(&row).ok_or_else(|| perr(n, "bad number"))?;
            if bias.len() != out {
                return Err(perr(n, "wrong number of biases"));
            }
            layers.push(Dense {
                weight: Matrix::from_vec(out, inp, data)?,
                bias,
            });
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(perr(0, "consecutive layer shapes do not chain"));
            }
        }
        Ok(MlpModel { layers })
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_row(s: &str) -> Option<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 2e-4,
            lr_decay_epochs: vec![24, 27],
            lr_decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::arg("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::arg("weight decay must be non-negative"));
        }
        if !(self.lr_decay_factor > 0.0) {
            return Err(Error::arg("lr decay factor must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.lr_decay_factor.powi(steps as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean of the batch objectives.
    pub train_loss: f64,
    pub val_ber: Option<f64>,
    pub repaired_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Batches whose CVaR box was infeasible and rescaled.
    pub repaired_batches: usize,
}

/// Minibatch SGD with momentum and weight decay.
///
/// The shuffle order of every epoch comes from a stream derived from
/// `config.seed`, so identical inputs give identical parameters. A minibatch
/// whose CVaR box is infeasible is repaired (see
/// [`crate::solver::WeightBox::repair`]) and counted in the trace.
pub fn train(
    model: &mut MlpModel,
    data: &LabeledDataset,
    validation: Option<&LabeledDataset>,
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    config.validate()?;
    if data.num_classes() != model.num_classes() || data.dim() != model.input_dim() {
        return Err(Error::shape("model and dataset disagree on features or classes"));
    }
    let objective = Objective::new(*spec, data.class_counts())?;
    let mut rng = RngState::new(config.seed).substream(1);
    let mut velocity = Gradients {
        layers: model
            .layers
            .iter()
            .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
            .collect(),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace {
        epochs: Vec::with_capacity(config.epochs),
        repaired_batches: 0,
    };
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut repaired = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let x = data.features().select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let cache = model.forward_cached(&x)?;
            let ev = objective.evaluate(&cache.logits, &y, epoch)?;
            if ev.repaired {
                repaired += 1;
            }
            loss_sum += ev.output.total;
            batches += 1;
            let mut grads = model.backward(&cache, &ev.output.grad_logits)?;
            grads.add_weight_decay(model, config.weight_decay);
            sgd_step(model, &mut velocity, &grads, lr, config.momentum);
        }
        let val_ber = match validation {
            Some(v) => Some(metrics::evaluate(model, v, None, 1)?.ber),
            None => None,
        };
        trace.repaired_batches += repaired;
        trace.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / batches as f64,
            val_ber,
            repaired_batches: repaired,
        });
    }
    Ok(trace)
}

fn sgd_step(model: &mut MlpModel, velocity: &mut Gradients, grads: &Gradients, lr: f64, momentum: f64) {
    for ((p, v), g) in model.layers.iter_mut().zip(&mut velocity.layers).zip(&grads.layers) {
        for ((pw, vw), gw) in p
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(v.weight.as_mut_slice())
            .zip(g.weight.as_slice())
        {
            *vw = momentum * *vw + gw;
            *pw -= lr * *vw;
        }
        for ((pb, vb), gb) in p.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
            *vb = momentum * *vb + gb;
            *pb -= lr * *vb;
        }
    }
}

/// Gradient-norm probe evaluated on the live model: the model's logits for
/// `x` and `‖Φ(x)‖` fed to [`gradient_norm_probe`].
pub fn classifier_gradient_norm(
    model: &MlpModel,
    x: &[f64],
    label: usize,
    pi: &[f64],
    weight: f64,
    t: usize,
) -> Result<f64> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let cache = model.forward_cached(&xm)?;
    let phi = l2_norm(cache.features().row(0));
    gradient_norm_probe(cache.logits.row(0), label, pi, weight, t, phi)
}

/// `‖∂ℓ/∂W_t‖` obtained by backpropagating the logit-adjusted weighted loss of
/// the single sample `(x, label)`.
pub fn realized_classifier_gradient_norm(
    model: &MlpModel,
    x: &[f64],
    label: usize,
    pi: &[f64],
    weight: f64,
    t: usize,
) -> Result<f64> {
    if t == label {
        return Err(Error::arg("probe class must differ from the label"));
    }
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let cache = model.forward_cached(&xm)?;
    let out = logit_adjusted_weighted_ce(&cache.logits, &[label], &[weight], &LogitAdjustment::new(pi.to_vec())?)?;
    let grads = model.backward(&cache, &out.grad_logits)?;
    let head = grads.layers.last().expect("at least one layer");
    Ok(l2_norm(head.weight.row(t)))
}

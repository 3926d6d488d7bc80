//! Learned off-grid AoA refinement.
//!
//! A multi-label occupancy network scores every grid point; the `S` best
//! are kept and a per-grid-point regression network predicts where inside
//! its cell the true angle lies. The corrected dictionary then feeds the
//! same RIS/direct separation as the structured estimator.
//!
//! Everything here runs in `f64`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::channel::{sample_channel_with, synthesize_rx, ChannelRealization, Scenario};
use crate::error::{Error, Result};
use crate::estimators::{estimate_with_support, project_direct, run_algorithm1, EstimationResult};
use crate::geometry::build_corrected_dictionary;
use crate::numerics::ComplexMatrix;

const MAGIC: &[u8; 6] = b"RISNN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            _ => return None,
        })
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

/// Multilayer perceptron with ReLU hidden layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    /// He-initialized network. `sizes` lists input, hidden and output widths.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (inputs, outputs) = (sizes[i], sizes[i + 1]);
                let last = i + 1 == n;
                let gain = if last { 1.0 } else { 2.0 };
                let dist = Normal::new(0.0, (gain / inputs as f64).sqrt()).expect("positive std");
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| dist.sample(rng)).collect(),
                    biases: vec![0.0; outputs],
                    activation: if last { output } else { Activation::Relu },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 || l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs
            {
                return Err(Error::DimensionMismatch(format!("layer {i} has inconsistent sizes")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::DimensionMismatch(format!("layer {i} does not chain")));
            }
            if !l.weights.iter().chain(&l.biases).all(|w| w.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().unwrap().activation
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in &self.layers {
            a = (0..l.outputs)
                .map(|o| l.activation.apply(l.biases[o] + dot(l.row(o), &a)))
                .collect();
        }
        Ok(a)
    }

    /// Pre-activations and activations of every layer (activation 0 is the input).
    fn forward_trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = vec![x.to_vec()];
        for l in &self.layers {
            let input = act.last().unwrap();
            let z: Vec<f64> = (0..l.outputs).map(|o| l.biases[o] + dot(l.row(o), input)).collect();
            act.push(z.iter().map(|&v| l.activation.apply(v)).collect());
            pre.push(z);
        }
        (pre, act)
    }

    /// Loss of one example and its gradient added into `grad`.
    fn accumulate(&self, x: &[f64], target: &[f64], mask: Option<&[f64]>, loss: Loss, grad: &mut Gradients) -> f64 {
        let (pre, act) = self.forward_trace(x);
        let last = self.layers.len() - 1;
        let out = &act[last + 1];
        let z_out = &pre[last];
        let n_out = out.len();
        let (value, mut delta): (f64, Vec<f64>) = match loss {
            Loss::BinaryCrossEntropy => {
                // Computed on logits for stability; sigmoid head is enforced by the caller.
                let v = z_out
                    .iter()
                    .zip(target)
                    .map(|(&z, &t)| softplus(z) - t * z)
                    .sum::<f64>()
                    / n_out as f64;
                let d = out.iter().zip(target).map(|(&a, &t)| (a - t) / n_out as f64).collect();
                (v, d)
            }
            Loss::MaskedMse => {
                let w = |i: usize| mask.map_or(1.0, |m| m[i]);
                let count: f64 = (0..n_out).map(w).sum();
                if count == 0.0 {
                    return 0.0;
                }
                let act_fn = self.layers[last].activation;
                let v = (0..n_out).map(|i| w(i) * (out[i] - target[i]).powi(2)).sum::<f64>() / count;
                let d = (0..n_out)
                    .map(|i| 2.0 * w(i) * (out[i] - target[i]) / count * act_fn.derivative(z_out[i], out[i]))
                    .collect();
                (v, d)
            }
        };
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &act[li];
            let g = &mut grad.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, input, &mut g.0[o * l.inputs..(o + 1) * l.inputs]);
                    g.1[o] += d;
                }
            }
            if li > 0 {
                let mut back = vec![0.0; l.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, l.row(o), &mut back);
                    }
                }
                let prev = &self.layers[li - 1];
                delta = back
                    .iter()
                    .zip(&pre[li - 1])
                    .zip(&act[li])
                    .map(|((&b, &z), &a)| b * prev.activation.derivative(z, a))
                    .collect();
            }
        }
        value
    }

    /// Mean loss over examples and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        data: &TrainingData<'_>,
        indices: &[usize],
        loss: Loss,
    ) -> Result<(f64, Gradients)> {
        self.check_loss(loss)?;
        let mut grad = Gradients::zeros_like(self);
        let mut total = 0.0;
        for &i in indices {
            self.check_input(&data.inputs[i])?;
            let mask = data.masks.map(|m| m[i].as_slice());
            total += self.accumulate(&data.inputs[i], &data.targets[i], mask, loss, &mut grad);
        }
        let n = indices.len().max(1) as f64;
        grad.scale(1.0 / n);
        Ok((total / n, grad))
    }

    /// Mean loss over the whole dataset.
    pub fn evaluate_loss(&self, data: &TrainingData<'_>, loss: Loss) -> Result<f64> {
        self.check_loss(loss)?;
        let mut total = 0.0;
        for i in 0..data.len() {
            self.check_input(&data.inputs[i])?;
            let mask = data.masks.map(|m| m[i].as_slice());
            total += self.example_loss(&data.inputs[i], &data.targets[i], mask, loss);
        }
        Ok(total / data.len().max(1) as f64)
    }

    fn example_loss(&self, x: &[f64], target: &[f64], mask: Option<&[f64]>, loss: Loss) -> f64 {
        let (pre, act) = self.forward_trace(x);
        let out = act.last().unwrap();
        let n = out.len() as f64;
        match loss {
            Loss::BinaryCrossEntropy => {
                pre.last()
                    .unwrap()
                    .iter()
                    .zip(target)
                    .map(|(&z, &t)| softplus(z) - t * z)
                    .sum::<f64>()
                    / n
            }
            Loss::MaskedMse => {
                let w = |i: usize| mask.map_or(1.0, |m| m[i]);
                let count: f64 = (0..out.len()).map(w).sum();
                if count == 0.0 {
                    0.0
                } else {
                    (0..out.len()).map(|i| w(i) * (out[i] - target[i]).powi(2)).sum::<f64>() / count
                }
            }
        }
    }

    fn check_loss(&self, loss: Loss) -> Result<()> {
        if loss == Loss::BinaryCrossEntropy && self.output_activation() != Activation::Sigmoid {
            return Err(Error::InvalidArgument(
                "binary cross-entropy needs a sigmoid output".into(),
            ));
        }
        Ok(())
    }

    /// Serializes to the RISNN1 checkpoint format.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for s in self.layer_sizes() {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        for l in &self.layers {
            out.write_all(&[l.activation.code()])?;
        }
        for l in &self.layers {
            for w in l.weights.iter().chain(&l.biases) {
                out.write_all(&w.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::Model {
            path: String::new(),
            message: m.to_string(),
        };
        let mut magic = [0u8; 6];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |input: &mut R| -> Result<usize> {
            input.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(u32buf) as usize)
        };
        let count = read_u32(&mut input)?;
        if count == 0 || count > 64 {
            return Err(bad("implausible layer count"));
        }
        let sizes = (0..=count).map(|_| read_u32(&mut input)).collect::<Result<Vec<_>>>()?;
        if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
            return Err(bad("implausible layer size"));
        }
        let mut codes = vec![0u8; count];
        input.read_exact(&mut codes).map_err(|_| bad("truncated header"))?;
        let mut layers = Vec::with_capacity(count);
        let mut f = [0u8; 8];
        for i in 0..count {
            let activation = Activation::from_code(codes[i]).ok_or_else(|| bad("unknown activation code"))?;
            let (inputs, outputs) = (sizes[i], sizes[i + 1]);
            let mut read_block = |n: usize| -> Result<Vec<f64>> {
                (0..n)
                    .map(|_| {
                        input.read_exact(&mut f).map_err(|_| bad("truncated weights"))?;
                        Ok(f64::from_le_bytes(f))
                    })
                    .collect()
            };
            let weights = read_block(inputs * outputs)?;
            let biases = read_block(outputs)?;
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                biases,
                activation,
            });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Self::from_layers(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Model {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::read_from(bytes.as_slice()).map_err(|e| match e {
            Error::Model { message, .. } => Error::Model {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Per-layer `(weights, biases)` gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }

    fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= s);
        }
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    BinaryCrossEntropy,
    /// Squared error averaged over outputs whose mask entry is nonzero.
    MaskedMse,
}

/// Borrowed view of a supervised dataset.
#[derive(Clone, Copy, Debug)]
pub struct TrainingData<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
    pub masks: Option<&'a [Vec<f64>]>,
}

impl TrainingData<'_> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

/// Loss before training followed by the mean minibatch loss of every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, model: &mut MlpModel, grad: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let pairs = [
                (&mut layer.weights, &grad.layers[li].0, li, 0),
                (&mut layer.biases, &grad.layers[li].1, li, 1),
            ];
            for (params, g, li, which) in pairs {
                let (m, v) = if which == 0 {
                    (&mut self.m.layers[li].0, &mut self.v.layers[li].0)
                } else {
                    (&mut self.m.layers[li].1, &mut self.v.layers[li].1)
                };
                for i in 0..params.len() {
                    m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                    v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Mini-batch Adam. Aborts with [`Error::Diverged`] on a non-finite loss.
pub fn train<R: Rng + ?Sized>(
    model: &mut MlpModel,
    data: &TrainingData<'_>,
    loss: Loss,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if data.targets.len() != data.len() || data.masks.is_some_and(|m| m.len() != data.len()) {
        return Err(Error::DimensionMismatch(
            "inputs, targets and masks differ in length".into(),
        ));
    }
    if let Some(t) = data.targets.iter().find(|t| t.len() != model.output_len()) {
        return Err(Error::DimensionMismatch(format!(
            "target has {} entries, model outputs {}",
            t.len(),
            model.output_len()
        )));
    }
    if cfg.batch_size == 0 || cfg.learning_rate <= 0.0 || cfg.learning_rate.is_nan() {
        return Err(Error::InvalidArgument(
            "batch size and learning rate must be positive".into(),
        ));
    }
    let initial = model.evaluate_loss(data, loss)?;
    if !initial.is_finite() {
        return Err(Error::Diverged(format!("initial loss is {initial}")));
    }
    let mut curve = vec![initial];
    let mut adam = Adam {
        m: Gradients::zeros_like(model),
        v: Gradients::zeros_like(model),
        t: 0,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (l, g) = model.loss_and_gradient(data, batch, loss)?;
            if !l.is_finite() || !g.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss {l} in epoch {epoch}")));
            }
            sum += l * batch.len() as f64;
            adam.step(model, &g, cfg.learning_rate);
        }
        curve.push(sum / data.len() as f64);
    }
    let final_loss = model.evaluate_loss(data, loss)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged(format!("final loss is {final_loss}")));
    }
    Ok(TrainReport {
        loss_curve: curve,
        final_loss,
    })
}

/// Relative disagreement between the analytic gradient and central
/// differences, per layer, over `coords` sampled parameters per layer
/// (all of them when the layer is smaller). Relative error is
/// `‖g_a − g_fd‖ / max(‖g_a‖, ‖g_fd‖, 1e-12)`.
pub fn gradient_check<R: Rng + ?Sized>(
    model: &MlpModel,
    data: &TrainingData<'_>,
    loss: Loss,
    eps: f64,
    coords: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let (_, grad) = model.loss_and_gradient(data, &all, loss)?;
    let mut probe = model.clone();
    let mut errors = Vec::with_capacity(model.layers.len());
    for li in 0..model.layers.len() {
        let nw = model.layers[li].weights.len();
        let total = nw + model.layers[li].biases.len();
        let picks: Vec<usize> = if total <= coords {
            (0..total).collect()
        } else {
            rand::seq::index::sample(rng, total, coords).into_vec()
        };
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for p in picks {
            let (analytic, original) = if p < nw {
                (grad.layers[li].0[p], model.layers[li].weights[p])
            } else {
                (grad.layers[li].1[p - nw], model.layers[li].biases[p - nw])
            };
            let mut eval = |v: f64| -> Result<f64> {
                if p < nw {
                    probe.layers[li].weights[p] = v;
                } else {
                    probe.layers[li].biases[p - nw] = v;
                }
                probe.evaluate_loss(data, loss)
            };
            let fd = (eval(original + eps)? - eval(original - eps)?) / (2.0 * eps);
            eval(original)?;
            diff += (analytic - fd).powi(2);
            na += analytic * analytic;
            nf += fd * fd;
        }
        errors.push(diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-12));
    }
    Ok(errors)
}

/// `[Re vec(Y); Im vec(Y)]` scaled to unit RMS; `vec` stacks columns.
pub fn featurize(y: &ComplexMatrix<f64>) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; 2 * n];
    let norm = y.frobenius_norm();
    if norm == 0.0 {
        return out;
    }
    let scale = (n as f64).sqrt() / norm;
    let (rows, cols) = y.shape();
    for c in 0..cols {
        for r in 0..rows {
            let z = y[(r, c)];
            out[c * rows + r] = z.re * scale;
            out[n + c * rows + r] = z.im * scale;
        }
    }
    out
}

/// Network input for a received pilot block: the direct-path projection
/// `y′` in channel units, featurized. Length `2M`.
pub fn nn_features(scenario: &Scenario<f64>, y: &ComplexMatrix<f64>) -> Result<Vec<f64>> {
    let y_prime = project_direct(y, &scenario.codebook)?.scale(scenario.observation_gain().inv());
    Ok(featurize(&y_prime))
}

/// One supervised example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub features: Vec<f64>,
    /// 0/1 per grid point `1..=K`.
    pub occupancy: Vec<f64>,
    /// `δ_k / half_cell(k)` per grid point, zero off-support.
    pub residuals: Vec<f64>,
}

/// Builds the label vectors of a realization.
pub fn labels(scenario: &Scenario<f64>, real: &ChannelRealization<f64>) -> (Vec<f64>, Vec<f64>) {
    let k = scenario.config.grid_points;
    let mut occ = vec![0.0; k];
    let mut res = vec![0.0; k];
    for p in &real.paths {
        occ[p.grid_index - 1] = 1.0;
        let hc = scenario.grid.half_cell(p.grid_index);
        res[p.grid_index - 1] = if hc > 0.0 { (p.delta / hc).clamp(-1.0, 1.0) } else { 0.0 };
    }
    (occ, res)
}

/// Independent draws with transmit power uniform over `power_range_dbm`.
/// With `required = Some(k)` every example has a path at grid index `k`.
pub fn generate_dataset<R: Rng + ?Sized>(
    scenario: &Scenario<f64>,
    n_samples: usize,
    power_range_dbm: (f64, f64),
    required: Option<usize>,
    rng: &mut R,
) -> Result<Vec<TrainingExample>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
    }
    let (lo, hi) = power_range_dbm;
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::InvalidArgument(format!("bad power range {lo}..{hi}")));
    }
    let mut sc = scenario.clone();
    (0..n_samples)
        .map(|_| {
            sc.config.tx_power_dbm = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            let (real, truth) = sample_channel_with(&sc, required, rng)?;
            let y = synthesize_rx(&sc, &real, &truth, rng)?;
            let (occupancy, residuals) = labels(&sc, &real);
            Ok(TrainingExample {
                features: nn_features(&sc, &y)?,
                occupancy,
                residuals,
            })
        })
        .collect()
}

/// One example per row: features, occupancy labels, residual labels.
pub fn write_dataset_csv<W: Write>(examples: &[TrainingExample], mut out: W) -> Result<()> {
    let Some(first) = examples.first() else {
        return Err(Error::InvalidArgument("empty dataset".into()));
    };
    let (nf, nk) = (first.features.len(), first.occupancy.len());
    let header: Vec<String> = (0..nf)
        .map(|i| format!("f{i}"))
        .chain((1..=nk).map(|k| format!("occ{k}")))
        .chain((1..=nk).map(|k| format!("res{k}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for e in examples {
        if e.features.len() != nf || e.occupancy.len() != nk || e.residuals.len() != nk {
            return Err(Error::DimensionMismatch("examples differ in shape".into()));
        }
        let row: Vec<String> = e
            .features
            .iter()
            .chain(&e.occupancy)
            .chain(&e.residuals)
            .map(|v| v.to_string())
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_dataset_csv<R: BufRead>(input: R) -> Result<Vec<TrainingExample>> {
    let mut lines = input.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })??;
    let cols: Vec<&str> = header.split(',').collect();
    let nf = cols.iter().filter(|c| c.starts_with('f')).count();
    let nk = cols.iter().filter(|c| c.starts_with("occ")).count();
    if cols.len() != nf + 2 * nk {
        return Err(Error::Parse {
            line: 1,
            message: "unrecognized header".into(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
        if values.len() != cols.len() {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("expected {} values, found {}", cols.len(), values.len()),
            });
        }
        out.push(TrainingExample {
            features: values[..nf].to_vec(),
            occupancy: values[nf..nf + nk].to_vec(),
            residuals: values[nf + nk..].to_vec(),
        });
    }
    Ok(out)
}

/// Indices (1-based grid points) of the `s` largest occupancy scores,
/// ties to the lower index, returned in ascending order.
pub fn detect_grid_aoas(model: &MlpModel, features: &[f64], s: usize) -> Result<Vec<usize>> {
    let scores = model.forward(features)?;
    if s > scores.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot pick {s} of {} grid points",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order[..s].iter().map(|i| i + 1).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Residual networks keyed by grid index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualBank {
    pub heads: BTreeMap<usize, MlpModel>,
}

/// `δ̂` over all `K + 1` dictionary columns: the scaled head output on the
/// support, zero elsewhere.
pub fn predict_residuals(
    bank: &ResidualBank,
    features: &[f64],
    support: &[usize],
    scenario: &Scenario<f64>,
) -> Result<Vec<f64>> {
    let k = scenario.config.grid_points;
    let mut delta = vec![0.0; k + 1];
    for &s in support {
        if s == 0 || s > k {
            return Err(Error::InvalidArgument(format!("grid index {s} outside 1..={k}")));
        }
        let head = bank
            .heads
            .get(&s)
            .ok_or_else(|| Error::InvalidArgument(format!("no residual model for grid index {s}")))?;
        let out = head.forward(features)?;
        let u = out[0].clamp(-1.0, 1.0);
        delta[s] = u * scenario.grid.half_cell(s);
    }
    Ok(delta)
}

/// Occupancy network plus residual heads.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralEstimator {
    pub occupancy: MlpModel,
    pub residuals: ResidualBank,
}

impl NeuralEstimator {
    pub const OCCUPANCY_FILE: &'static str = "occupancy.risnn";

    pub fn residual_file(k: usize) -> String {
        format!("residual_{k:02}.risnn")
    }

    /// Files a model directory must contain for `k` grid points.
    pub fn required_files(dir: &Path, k: usize) -> Vec<PathBuf> {
        std::iter::once(dir.join(Self::OCCUPANCY_FILE))
            .chain((1..=k).map(|i| dir.join(Self::residual_file(i))))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.occupancy.save(&dir.join(Self::OCCUPANCY_FILE))?;
        for (k, head) in &self.residuals.heads {
            head.save(&dir.join(Self::residual_file(*k)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, k: usize) -> Result<Self> {
        let occupancy = MlpModel::load(&dir.join(Self::OCCUPANCY_FILE))?;
        if occupancy.output_len() != k {
            return Err(Error::Model {
                path: dir.join(Self::OCCUPANCY_FILE).display().to_string(),
                message: format!("expected {k} outputs, found {}", occupancy.output_len()),
            });
        }
        let heads = (1..=k)
            .map(|i| Ok((i, MlpModel::load(&dir.join(Self::residual_file(i)))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            occupancy,
            residuals: ResidualBank { heads },
        })
    }
}

/// How the off-grid pipeline obtains angles.
#[derive(Clone, Copy, Debug)]
pub enum OffgridMode<'a> {
    /// Occupancy network for the support, residual heads for `δ`.
    Predicted(&'a NeuralEstimator),
    /// True support and true residuals.
    PerfectAoa(&'a ChannelRealization<f64>),
    /// The structured estimator on the uncorrected grid.
    ZeroResidual,
}

impl fmt::Display for OffgridMode<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OffgridMode::Predicted(_) => "predicted",
            OffgridMode::PerfectAoa(_) => "perfect-aoa",
            OffgridMode::ZeroResidual => "zero-residual",
        })
    }
}

/// Channel estimates from off-grid observations.
pub fn estimate_channels_offgrid(
    y: &ComplexMatrix<f64>,
    scenario: &Scenario<f64>,
    mode: OffgridMode<'_>,
) -> Result<EstimationResult<f64>> {
    let (support, delta) = match mode {
        OffgridMode::ZeroResidual => {
            return run_algorithm1(y, &scenario.dictionary, &scenario.codebook, &scenario.config)
        }
        OffgridMode::PerfectAoa(real) => (real.support(), real.delta_vec.clone()),
        OffgridMode::Predicted(est) => {
            let features = nn_features(scenario, y)?;
            let support = detect_grid_aoas(&est.occupancy, &features, scenario.config.num_paths)?;
            let delta = predict_residuals(&est.residuals, &features, &support, scenario)?;
            (support, delta)
        }
    };
    let corrected = build_corrected_dictionary(&scenario.ula, &scenario.grid, &delta)?;
    let y_unit = y.scale(scenario.observation_gain().inv());
    let mut result = estimate_with_support(&y_unit, &corrected, &scenario.codebook, &support)?;
    result.delta_hat = delta;
    Ok(result)
}

/// Training sizes and architectures for [`train_neural_estimator`].
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralTrainingConfig {
    pub occupancy_hidden: Vec<usize>,
    pub residual_hidden: Vec<usize>,
    pub occupancy_samples: usize,
    /// Per residual head; each head sees only examples with its grid point occupied.
    pub residual_samples: usize,
    pub occupancy_train: TrainConfig,
    pub residual_train: TrainConfig,
    pub power_range_dbm: (f64, f64),
}

impl Default for NeuralTrainingConfig {
    fn default() -> Self {
        Self {
            occupancy_hidden: vec![512, 256],
            residual_hidden: vec![64, 32],
            occupancy_samples: 20_000,
            residual_samples: 6_000,
            occupancy_train: TrainConfig {
                epochs: 20,
                ..Default::default()
            },
            residual_train: TrainConfig {
                epochs: 40,
                ..Default::default()
            },
            power_range_dbm: (-10.0, 30.0),
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains the residual head for grid index `k`.
pub fn train_residual_head(
    scenario: &Scenario<f64>,
    k: usize,
    cfg: &NeuralTrainingConfig,
    seed: u64,
) -> Result<(MlpModel, TrainReport)> {
    let mut rng = stream_rng(seed, 1 + k as u64);
    let data = generate_dataset(scenario, cfg.residual_samples, cfg.power_range_dbm, Some(k), &mut rng)?;
    let inputs: Vec<Vec<f64>> = data.iter().map(|e| e.features.clone()).collect();
    let targets: Vec<Vec<f64>> = data.iter().map(|e| vec![e.residuals[k - 1]]).collect();
    let masks: Vec<Vec<f64>> = data.iter().map(|e| vec![e.occupancy[k - 1]]).collect();
    let sizes: Vec<usize> = std::iter::once(inputs[0].len())
        .chain(cfg.residual_hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let mut model = MlpModel::new(&sizes, Activation::Tanh, &mut rng)?;
    let view = TrainingData {
        inputs: &inputs,
        targets: &targets,
        masks: Some(&masks),
    };
    let report = train(&mut model, &view, Loss::MaskedMse, &cfg.residual_train, &mut rng)?;
    Ok((model, report))
}

/// Trains the occupancy network.
pub fn train_occupancy(
    scenario: &Scenario<f64>,
    cfg: &NeuralTrainingConfig,
    seed: u64,
) -> Result<(MlpModel, TrainReport)> {
    let mut rng = stream_rng(seed, 0);
    let data = generate_dataset(scenario, cfg.occupancy_samples, cfg.power_range_dbm, None, &mut rng)?;
    let inputs: Vec<Vec<f64>> = data.iter().map(|e| e.features.clone()).collect();
    let targets: Vec<Vec<f64>> = data.iter().map(|e| e.occupancy.clone()).collect();
    let sizes: Vec<usize> = std::iter::once(inputs[0].len())
        .chain(cfg.occupancy_hidden.iter().copied())
        .chain(std::iter::once(scenario.config.grid_points))
        .collect();
    let mut model = MlpModel::new(&sizes, Activation::Sigmoid, &mut rng)?;
    let view = TrainingData {
        inputs: &inputs,
        targets: &targets,
        masks: None,
    };
    let report = train(
        &mut model,
        &view,
        Loss::BinaryCrossEntropy,
        &cfg.occupancy_train,
        &mut rng,
    )?;
    Ok((model, report))
}

/// Residual heads for every grid point, trained in parallel. Each head has
/// its own RNG stream, so the result does not depend on scheduling.
pub fn train_residual_bank(scenario: &Scenario<f64>, cfg: &NeuralTrainingConfig, seed: u64) -> Result<ResidualBank> {
    let heads = (1..=scenario.config.grid_points)
        .into_par_iter()
        .map(|k| {
            let (model, report) = train_residual_head(scenario, k, cfg, seed)?;
            log::info!(
                "residual head {k}: loss {:.4} -> {:.4}",
                report.loss_curve[0],
                report.final_loss
            );
            Ok((k, model))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(ResidualBank { heads })
}

/// Trains the full estimator: occupancy network, then all residual heads.
pub fn train_neural_estimator(
    scenario: &Scenario<f64>,
    cfg: &NeuralTrainingConfig,
    seed: u64,
) -> Result<NeuralEstimator> {
    let (occupancy, report) = train_occupancy(scenario, cfg, seed)?;
    log::info!(
        "occupancy: loss {:.4} -> {:.4}",
        report.loss_curve[0],
        report.final_loss
    );
    let residuals = train_residual_bank(scenario, cfg, seed)?;
    Ok(NeuralEstimator { occupancy, residuals })
}

/// Residual accuracy with the true support given: mean `|δ̂ − δ|` and the
/// zero-prediction baseline mean `|δ|`, both in radians, over all paths.
pub fn evaluate_residuals(
    bank: &ResidualBank,
    scenario: &Scenario<f64>,
    examples: &[TrainingExample],
) -> Result<(f64, f64)> {
    let (mut err, mut base, mut n) = (0.0, 0.0, 0usize);
    for e in examples {
        let support: Vec<usize> = e
            .occupancy
            .iter()
            .enumerate()
            .filter(|(_, &o)| o > 0.5)
            .map(|(i, _)| i + 1)
            .collect();
        let delta_hat = predict_residuals(bank, &e.features, &support, scenario)?;
        for &k in &support {
            let truth = e.residuals[k - 1] * scenario.grid.half_cell(k);
            err += (delta_hat[k] - truth).abs();
            base += truth.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no occupied grid points to score".into()));
    }
    Ok((err / n as f64, base / n as f64))
}

/// Fraction of examples whose detected support equals the labelled one.
pub fn detection_rate(model: &MlpModel, examples: &[TrainingExample], s: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples".into()));
    }
    let mut hits = 0;
    for e in examples {
        let truth: Vec<usize> = e
            .occupancy
            .iter()
            .enumerate()
            .filter(|(_, &o)| o > 0.5)
            .map(|(i, _)| i + 1)
            .collect();
        if detect_grid_aoas(model, &e.features, s)? == truth {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Reads a whole dataset file.
pub fn load_dataset(path: &Path) -> Result<Vec<TrainingExample>> {
    read_dataset_csv(BufReader::new(fs::File::open(path)?))
}

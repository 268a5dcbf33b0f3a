//! The trainable models: the image decoder, the fully-connected VAE and the
//! fully-connected GAN, with their losses and epoch-level training loops.
//!
//! Parameters live in a [`ParamSet`]; layers only hold indices into it. A
//! forward pass binds the set onto a [`Tape`] and threads the resulting
//! [`Var`]s through the layers.

mod decoder;
mod gan;
mod train;
mod vae;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, BatchNormStats, Float, Tape, Tensor, Var};

pub use decoder::{decoder_loss, Decoder, DecoderConfig};
pub use gan::{gan_losses, GanConfig, GanModel, GeneratorOutput, LEAKY_SLOPE, LOG_CLAMP};
pub use train::{DecoderTrainer, EpochMetrics, GanTrainer, TrainConfig, VaeTrainer, DEFAULT_BATCH_SIZE};
pub use vae::{vae_loss, VaeConfig, VaeLoss, VaeModel, VaeOutput};

/// Named trainable tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Float> Default for ParamSet<T> {
    fn default() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }
}

impl<T: Float> ParamSet<T> {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.values[i])
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter on `tape`; `trainable = false` records them as
    /// constants so no gradient flows into them.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone(), trainable)).collect()
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name).ok_or_else(|| Error::param(format!("unknown parameter {name:?}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(format!("parameter {name:?} has shape {:?}, got {:?}", slot.shape(), value.shape())));
        }
        *slot = value;
        Ok(())
    }
}

/// Named batch-norm running statistics, saved alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StatSet<T> {
    names: Vec<String>,
    stats: Vec<BatchNormStats<T>>,
}

impl<T: Float> Default for StatSet<T> {
    fn default() -> Self {
        Self { names: Vec::new(), stats: Vec::new() }
    }
}

impl<T: Float> StatSet<T> {
    fn add(&mut self, name: impl Into<String>, channels: usize) -> usize {
        self.names.push(name.into());
        self.stats.push(BatchNormStats::new(channels));
        self.stats.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn stats(&self) -> &[BatchNormStats<T>] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [BatchNormStats<T>] {
        &mut self.stats
    }
}

/// Every tensor a model persists: parameters as `name`, running statistics
/// as `name.running_mean` / `name.running_var`.
pub fn named_tensors<T: Float>(params: &ParamSet<T>, stats: &StatSet<T>) -> Vec<(String, Tensor<T>)> {
    let mut out: Vec<(String, Tensor<T>)> =
        params.names.iter().cloned().zip(params.values.iter().cloned()).collect();
    for (name, s) in stats.names.iter().zip(&stats.stats) {
        out.push((format!("{name}.running_mean"), s.mean.clone()));
        out.push((format!("{name}.running_var"), s.var.clone()));
    }
    out
}

/// Inverse of [`named_tensors`]: overwrites every parameter and statistic,
/// requiring each to be present with the expected shape.
pub fn load_named<T: Float>(params: &mut ParamSet<T>, stats: &mut StatSet<T>, entries: &[(String, Tensor<T>)]) -> Result<()> {
    let find = |name: &str| {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name:?}")))
    };
    for name in params.names.clone() {
        params.set(&name, find(&name)?)?;
    }
    for (name, s) in stats.names.iter().zip(stats.stats.iter_mut()) {
        for (suffix, slot) in [("running_mean", &mut s.mean), ("running_var", &mut s.var)] {
            let t = find(&format!("{name}.{suffix}"))?;
            if t.shape() != slot.shape() {
                return Err(Error::dim(format!("{name}.{suffix} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
    }
    let known = params.len() + 2 * stats.stats.len();
    if entries.len() != known {
        return Err(Error::Format(format!("checkpoint has {} tensors, model expects {known}", entries.len())));
    }
    Ok(())
}

/// Uniform in `±1/sqrt(fan_in)`.
fn uniform_init<T: Float>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

/// Fully-connected layer `x·W + b` with `W` stored `in×out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Float>(params: &mut ParamSet<T>, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weight = params.add(format!("{name}.weight"), uniform_init(&[inputs, outputs], inputs, rng));
        let bias = params.add(format!("{name}.bias"), uniform_init(&[1, outputs], inputs, rng));
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.inputs {
            return Err(Error::dim(format!("linear layer expects B×{}, got {shape:?}", self.inputs)));
        }
        let xw = tape.matmul(x, vars[self.weight])?;
        // Broadcast the bias row over the batch as ones(B×1)·b.
        let ones = tape.constant(Tensor::ones(&[shape[0], 1]));
        let bias = tape.matmul(ones, vars[self.bias])?;
        tape.add(xw, bias)
    }
}

/// Batch normalization with learned per-feature scale and shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

impl BatchNorm {
    pub fn new<T: Float>(params: &mut ParamSet<T>, stats: &mut StatSet<T>, name: &str, channels: usize) -> Self {
        let gamma = params.add(format!("{name}.gamma"), Tensor::ones(&[channels]));
        let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        let stats = stats.add(name, channels);
        Self { gamma, beta, stats }
    }

    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        stats: &mut StatSet<T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        tape.batch_norm(x, vars[self.gamma], vars[self.beta], &mut stats.stats[self.stats], mode)
    }
}

/// Checks a `B×width` input.
fn expect_width(shape: &[usize], width: usize, what: &str) -> Result<usize> {
    match shape {
        [b, w] if *w == width && *b > 0 => Ok(*b),
        _ => Err(Error::dim(format!("{what} expects a B×{width} input, got {shape:?}"))),
    }
}

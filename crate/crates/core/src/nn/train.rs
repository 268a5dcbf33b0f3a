use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{decoder_loss, gan_losses, vae_loss, Decoder, GanModel, VaeModel};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, BatchNormMode, Float, Tape, Tensor, Var};

pub const DEFAULT_BATCH_SIZE: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { batch_size: DEFAULT_BATCH_SIZE, adam: AdamConfig { lr, ..AdamConfig::default() } }
    }

    /// Learning rate 2e-4 with β1 = 0.5.
    pub fn gan() -> Self {
        Self { batch_size: DEFAULT_BATCH_SIZE, adam: AdamConfig { lr: 2e-4, beta1: 0.5, ..AdamConfig::default() } }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

/// Sample-weighted mean losses over one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub samples: usize,
    pub values: Vec<(&'static str, f64)>,
}

impl EpochMetrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    fn accumulate(&mut self, batch: usize, values: &[(&'static str, f64)]) {
        if self.values.is_empty() {
            self.values = values.iter().map(|&(n, _)| (n, 0.0)).collect();
        }
        for (slot, &(_, v)) in self.values.iter_mut().zip(values) {
            slot.1 += v * batch as f64;
        }
        self.samples += batch;
    }

    fn finish(mut self) -> Self {
        let n = self.samples.max(1) as f64;
        self.values.iter_mut().for_each(|(_, v)| *v /= n);
        self
    }
}

/// Shuffled minibatch index lists. Batch-norm needs two samples, so a
/// trailing batch of one is dropped.
fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::param("cannot train on an empty dataset"));
    }
    if batch_size == 0 || batch_size > n {
        return Err(Error::param(format!("batch size {batch_size} must be in 1..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect())
}

fn normal<T: Float>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(StandardNormal.sample(rng)))
}

fn collect<T: Float>(grads: &crate::tensor::Gradients<T>, vars: &[Var]) -> Vec<Tensor<T>> {
    vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
}

fn scalar<T: Float>(tape: &Tape<T>, v: Var) -> f64 {
    tape.value(v).data()[0].f64()
}

fn rows<T: Float>(data: &Tensor<T>) -> Result<usize> {
    data.shape().first().copied().ok_or_else(|| Error::dim("training data must have a batch axis"))
}

pub struct DecoderTrainer<T> {
    pub model: Decoder<T>,
    pub config: TrainConfig,
    optimizer: Adam<T>,
}

impl<T: Float> DecoderTrainer<T> {
    pub fn new(model: Decoder<T>, config: TrainConfig) -> Self {
        Self { model, config, optimizer: Adam::new(config.adam) }
    }

    /// One shuffled pass over `(coefficients, images)` pairs.
    pub fn train_epoch(&mut self, coeffs: &Tensor<T>, images: &Tensor<T>, seed: u64) -> Result<EpochMetrics> {
        let n = rows(coeffs)?;
        self.check_pairs(coeffs, images)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut metrics = EpochMetrics { samples: 0, values: Vec::new() };
        for idx in batches(n, self.config.batch_size, &mut rng)? {
            let mut tape = Tape::new();
            let vars = self.model.params.bind(&mut tape, true);
            let w = tape.constant(coeffs.select_rows(&idx)?);
            let target = tape.constant(images.select_rows(&idx)?);
            let out = self.model.forward(&mut tape, &vars, w, BatchNormMode::Train)?;
            let loss = decoder_loss(&mut tape, out, target)?;
            let value = scalar(&tape, loss);
            let grads = tape.backward(loss)?;
            self.optimizer.step(self.model.params.values_mut(), &collect(&grads, &vars))?;
            metrics.accumulate(idx.len(), &[("l1", value)]);
        }
        Ok(metrics.finish())
    }

    /// Mean L1 loss over the data in fixed order without touching any state.
    /// `Train` mode normalizes with per-batch statistics.
    pub fn evaluate(&self, coeffs: &Tensor<T>, images: &Tensor<T>, mode: BatchNormMode) -> Result<f64> {
        let n = rows(coeffs)?;
        self.check_pairs(coeffs, images)?;
        let mut model = self.model.clone();
        let mut total = 0.0;
        let mut count = 0;
        for start in (0..n).step_by(self.config.batch_size) {
            let end = (start + self.config.batch_size).min(n);
            if mode == BatchNormMode::Train && end - start < 2 {
                continue;
            }
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape, false);
            let w = tape.constant(coeffs.slice_rows(start, end)?);
            let target = tape.constant(images.slice_rows(start, end)?);
            let out = model.forward(&mut tape, &vars, w, mode)?;
            let loss = decoder_loss(&mut tape, out, target)?;
            total += scalar(&tape, loss) * (end - start) as f64;
            count += end - start;
        }
        Ok(total / count.max(1) as f64)
    }

    fn check_pairs(&self, coeffs: &Tensor<T>, images: &Tensor<T>) -> Result<()> {
        let n = rows(coeffs)?;
        if images.shape() != self.model.config.output_shape(n) {
            return Err(Error::dim(format!(
                "decoder targets {:?} do not match {:?}",
                images.shape(),
                self.model.config.output_shape(n)
            )));
        }
        Ok(())
    }
}

pub struct VaeTrainer<T> {
    pub model: VaeModel<T>,
    pub config: TrainConfig,
    optimizer: Adam<T>,
}

impl<T: Float> VaeTrainer<T> {
    pub fn new(model: VaeModel<T>, config: TrainConfig) -> Self {
        Self { model, config, optimizer: Adam::new(config.adam) }
    }

    pub fn train_epoch(&mut self, data: &Tensor<T>, seed: u64) -> Result<EpochMetrics> {
        let n = rows(data)?;
        let h = self.model.config.latent;
        let beta = self.model.config.beta;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut metrics = EpochMetrics { samples: 0, values: Vec::new() };
        for idx in batches(n, self.config.batch_size, &mut rng)? {
            let noise = normal::<T>(&[idx.len(), h], &mut rng);
            let mut tape = Tape::new();
            let vars = self.model.params.bind(&mut tape, true);
            let x = tape.constant(data.select_rows(&idx)?);
            let eps = tape.constant(noise);
            let out = self.model.forward(&mut tape, &vars, x, eps)?;
            let loss = vae_loss(&mut tape, x, out.reconstruction, out.mu, out.log_var, beta)?;
            let values = [("loss", scalar(&tape, loss.total)), ("recon", scalar(&tape, loss.recon)), ("kl", scalar(&tape, loss.kl))];
            let grads = tape.backward(loss.total)?;
            self.optimizer.step(self.model.params.values_mut(), &collect(&grads, &vars))?;
            metrics.accumulate(idx.len(), &values);
        }
        Ok(metrics.finish())
    }
}

pub struct GanTrainer<T> {
    pub model: GanModel<T>,
    pub config: TrainConfig,
    d_optimizer: Adam<T>,
    g_optimizer: Adam<T>,
}

impl<T: Float> GanTrainer<T> {
    pub fn new(model: GanModel<T>, config: TrainConfig) -> Self {
        Self { model, config, d_optimizer: Adam::new(config.adam), g_optimizer: Adam::new(config.adam) }
    }

    /// Per batch: one discriminator step on real and generated samples, then
    /// one generator step on the same noise. Real and generated samples pass
    /// through the discriminator as separate batches.
    pub fn train_epoch(&mut self, data: &Tensor<T>, seed: u64) -> Result<EpochMetrics> {
        let n = rows(data)?;
        let h = self.model.config.noise;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut metrics = EpochMetrics { samples: 0, values: Vec::new() };
        for idx in batches(n, self.config.batch_size, &mut rng)? {
            let z = normal::<T>(&[idx.len(), h], &mut rng);
            let real = data.select_rows(&idx)?;
            let model = &mut self.model;
            let mut d_stats = model.discriminator_stats.clone();
            let mut g_stats = model.generator_stats.clone();

            // Discriminator step. The generator's running statistics are
            // updated once per batch, in the generator step below.
            let mut tape = Tape::new();
            let gvars = model.generator.bind(&mut tape, false);
            let dvars = model.discriminator.bind(&mut tape, true);
            let zv = tape.constant(z.clone());
            let mut g_scratch = g_stats.clone();
            let fake = model.generator_forward(&mut tape, &gvars, zv, &mut g_scratch, BatchNormMode::Train)?;
            let rv = tape.constant(real);
            let d_real = model.discriminator_forward(&mut tape, &dvars, rv, &mut d_stats, BatchNormMode::Train)?;
            let d_fake = model.discriminator_forward(&mut tape, &dvars, fake, &mut d_stats, BatchNormMode::Train)?;
            let (loss_d, _) = gan_losses(&mut tape, d_real, d_fake)?;
            let d_value = scalar(&tape, loss_d);
            let real_score = mean(tape.value(d_real));
            let fake_score = mean(tape.value(d_fake));
            let grads = tape.backward(loss_d)?;
            self.d_optimizer.step(model.discriminator.values_mut(), &collect(&grads, &dvars))?;

            // Generator step against the updated discriminator.
            let mut tape = Tape::new();
            let gvars = model.generator.bind(&mut tape, true);
            let dvars = model.discriminator.bind(&mut tape, false);
            let zv = tape.constant(z);
            let fake = model.generator_forward(&mut tape, &gvars, zv, &mut g_stats, BatchNormMode::Train)?;
            let mut d_scratch = d_stats.clone();
            let d_fake = model.discriminator_forward(&mut tape, &dvars, fake, &mut d_scratch, BatchNormMode::Train)?;
            let ones = tape.constant(Tensor::ones(tape.shape(d_fake)));
            let (_, loss_g) = gan_losses(&mut tape, ones, d_fake)?;
            let g_value = scalar(&tape, loss_g);
            let grads = tape.backward(loss_g)?;
            self.g_optimizer.step(model.generator.values_mut(), &collect(&grads, &gvars))?;
            model.discriminator_stats = d_stats;
            model.generator_stats = g_stats;

            metrics.accumulate(
                idx.len(),
                &[("d_loss", d_value), ("g_loss", g_value), ("d_real", real_score), ("d_fake", fake_score)],
            );
        }
        Ok(metrics.finish())
    }
}

fn mean<T: Float>(t: &Tensor<T>) -> f64 {
    t.data().iter().map(|v| v.f64()).sum::<f64>() / t.numel().max(1) as f64
}

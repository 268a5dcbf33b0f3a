use rand::Rng;

use super::{expect_width, BatchNorm, Linear, ParamSet, StatSet};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Float, Tape, Tensor, Unary, Var};

/// Negative slope of the discriminator's leaky ReLUs.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Discriminator outputs are clamped to `[LOG_CLAMP, 1 − LOG_CLAMP]` before
/// taking logarithms.
pub const LOG_CLAMP: f64 = 1e-7;

/// Activation on the generator's last layer. Whitened targets are signed,
/// so the default is linear.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GeneratorOutput {
    #[default]
    Linear,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GanConfig {
    /// Data width `N`.
    pub data: usize,
    /// Noise width `H`.
    pub noise: usize,
    pub output: GeneratorOutput,
}

impl GanConfig {
    pub fn mnist() -> Self {
        Self { data: 512, noise: 64, output: GeneratorOutput::Linear }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise == 0 || self.data < 4 {
            return Err(Error::param(format!("GAN needs noise width ≥ 1 and data width ≥ 4, got {self:?}")));
        }
        Ok(())
    }
}

/// Generator `H → 2H → 4H → N` (batch-norm + ReLU on the hidden layers) and
/// discriminator `N → N/2 → N/4 → 1` (leaky ReLU, batch-norm on the second
/// layer, sigmoid output).
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel<T> {
    pub config: GanConfig,
    pub generator: ParamSet<T>,
    pub generator_stats: StatSet<T>,
    pub discriminator: ParamSet<T>,
    pub discriminator_stats: StatSet<T>,
    g: [Linear; 3],
    g_norm: [BatchNorm; 2],
    d: [Linear; 3],
    d_norm: BatchNorm,
}

impl<T: Float> GanModel<T> {
    pub fn new(config: GanConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (n, h) = (config.data, config.noise);
        let mut gp = ParamSet::default();
        let mut gs = StatSet::default();
        let g1 = Linear::new(&mut gp, "gen1", h, 2 * h, rng);
        let n1 = BatchNorm::new(&mut gp, &mut gs, "gen1.bn", 2 * h);
        let g2 = Linear::new(&mut gp, "gen2", 2 * h, 4 * h, rng);
        let n2 = BatchNorm::new(&mut gp, &mut gs, "gen2.bn", 4 * h);
        let g3 = Linear::new(&mut gp, "gen3", 4 * h, n, rng);
        let mut dp = ParamSet::default();
        let mut ds = StatSet::default();
        let d1 = Linear::new(&mut dp, "disc1", n, n / 2, rng);
        let d2 = Linear::new(&mut dp, "disc2", n / 2, n / 4, rng);
        let dn = BatchNorm::new(&mut dp, &mut ds, "disc2.bn", n / 4);
        let d3 = Linear::new(&mut dp, "disc3", n / 4, 1, rng);
        Ok(Self {
            config,
            generator: gp,
            generator_stats: gs,
            discriminator: dp,
            discriminator_stats: ds,
            g: [g1, g2, g3],
            g_norm: [n1, n2],
            d: [d1, d2, d3],
            d_norm: dn,
        })
    }

    /// `vars` are the bound generator parameters.
    pub fn generator_forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        z: Var,
        stats: &mut StatSet<T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        expect_width(tape.shape(z), self.config.noise, "generator")?;
        let mut h = z;
        for (layer, norm) in self.g.iter().zip(&self.g_norm) {
            h = layer.forward(tape, vars, h)?;
            h = norm.forward(tape, vars, h, stats, mode)?;
            h = tape.relu(h)?;
        }
        let out = self.g[2].forward(tape, vars, h)?;
        match self.config.output {
            GeneratorOutput::Linear => Ok(out),
            GeneratorOutput::Relu => tape.relu(out),
        }
    }

    /// `vars` are the bound discriminator parameters. Returns `B×1`.
    pub fn discriminator_forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        x: Var,
        stats: &mut StatSet<T>,
        mode: BatchNormMode,
    ) -> Result<Var> {
        expect_width(tape.shape(x), self.config.data, "discriminator")?;
        let [d1, d2, d3] = &self.d;
        let h = d1.forward(tape, vars, x)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = d2.forward(tape, vars, h)?;
        let h = self.d_norm.forward(tape, vars, h, stats, mode)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = d3.forward(tape, vars, h)?;
        tape.sigmoid(h)
    }

    /// Eval-mode generation from `B×H` noise.
    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.generator.bind(&mut tape, false);
        let z = tape.constant(z.clone());
        let mut stats = self.generator_stats.clone();
        let out = self.generator_forward(&mut tape, &vars, z, &mut stats, BatchNormMode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Discriminator scores for a `B×N` batch. `mode` selects batch or
    /// running statistics; running statistics are never updated here.
    pub fn score(&self, x: &Tensor<T>, mode: BatchNormMode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.discriminator.bind(&mut tape, false);
        let x = tape.constant(x.clone());
        let mut stats = self.discriminator_stats.clone();
        let out = self.discriminator_forward(&mut tape, &vars, x, &mut stats, mode)?;
        Ok(tape.value(out).clone())
    }
}

/// Returns `(loss_D, loss_G)` with `loss_D = −mean(log d_real) − mean(log(1 − d_fake))`
/// and the non-saturating `loss_G = −mean(log d_fake)`.
pub fn gan_losses<T: Float>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    let clamp = Unary::Clamp(T::of(LOG_CLAMP), T::of(1.0 - LOG_CLAMP));
    let real = tape.unary(clamp, d_real)?;
    let fake = tape.unary(clamp, d_fake)?;
    let log_real = tape.log(real)?;
    let real_term = tape.mean_all(log_real)?;
    let neg_fake = tape.unary(Unary::Neg, fake)?;
    let one_minus_fake = tape.unary(Unary::Shift(T::one()), neg_fake)?;
    let log_not_fake = tape.log(one_minus_fake)?;
    let fake_term = tape.mean_all(log_not_fake)?;
    let d_sum = tape.add(real_term, fake_term)?;
    let loss_d = tape.scale(d_sum, -1.0)?;
    let log_fake = tape.log(fake)?;
    let g_mean = tape.mean_all(log_fake)?;
    let loss_g = tape.scale(g_mean, -1.0)?;
    Ok((loss_d, loss_g))
}

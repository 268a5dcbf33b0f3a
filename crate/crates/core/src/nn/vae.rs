use rand::Rng;

use super::{expect_width, Linear, ParamSet, StatSet};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tape, Tensor, Unary, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeConfig {
    /// Input width `N`.
    pub input: usize,
    /// Latent width `H`.
    pub latent: usize,
    /// KL weight.
    pub beta: f64,
}

impl VaeConfig {
    pub fn mnist() -> Self {
        Self { input: 512, latent: 64, beta: 0.001 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.latent == 0 {
            return Err(Error::param("VAE widths must be positive"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::param(format!("VAE beta must be finite and ≥ 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Fully-connected VAE. Encoder `N → 4H → 4H → 2H` with two `2H → H` heads
/// for μ and log σ²; decoder `H → 4H → 4H → N` with a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel<T> {
    pub config: VaeConfig,
    pub params: ParamSet<T>,
    pub stats: StatSet<T>,
    encoder: [Linear; 3],
    mu: Linear,
    log_var: Linear,
    decoder: [Linear; 3],
}

/// Tape handles of one VAE forward pass.
#[derive(Clone, Copy, Debug)]
pub struct VaeOutput {
    pub reconstruction: Var,
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
}

/// Loss handles: `total = recon + beta·kl`.
#[derive(Clone, Copy, Debug)]
pub struct VaeLoss {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

impl<T: Float> VaeModel<T> {
    pub fn new(config: VaeConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (n, h) = (config.input, config.latent);
        let mut p = ParamSet::default();
        let encoder = [
            Linear::new(&mut p, "enc1", n, 4 * h, rng),
            Linear::new(&mut p, "enc2", 4 * h, 4 * h, rng),
            Linear::new(&mut p, "enc3", 4 * h, 2 * h, rng),
        ];
        let mu = Linear::new(&mut p, "enc_mu", 2 * h, h, rng);
        let log_var = Linear::new(&mut p, "enc_log_var", 2 * h, h, rng);
        let decoder = [
            Linear::new(&mut p, "dec1", h, 4 * h, rng),
            Linear::new(&mut p, "dec2", 4 * h, 4 * h, rng),
            Linear::new(&mut p, "dec3", 4 * h, n, rng),
        ];
        Ok(Self { config, params: p, stats: StatSet::default(), encoder, mu, log_var, decoder })
    }

    /// Returns `(μ, log σ²)`.
    pub fn encode(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        expect_width(tape.shape(x), self.config.input, "VAE encoder")?;
        let mut h = x;
        for layer in &self.encoder {
            h = layer.forward(tape, vars, h)?;
            h = tape.relu(h)?;
        }
        Ok((self.mu.forward(tape, vars, h)?, self.log_var.forward(tape, vars, h)?))
    }

    pub fn decode(&self, tape: &mut Tape<T>, vars: &[Var], z: Var) -> Result<Var> {
        expect_width(tape.shape(z), self.config.latent, "VAE decoder")?;
        let [d1, d2, d3] = &self.decoder;
        let h = d1.forward(tape, vars, z)?;
        let h = tape.relu(h)?;
        let h = d2.forward(tape, vars, h)?;
        let h = tape.relu(h)?;
        d3.forward(tape, vars, h)
    }

    /// `z = μ + exp(½·log σ²)⊙ε` with externally drawn `noise = ε`.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, noise: Var) -> Result<VaeOutput> {
        let batch = expect_width(tape.shape(x), self.config.input, "VAE")?;
        if tape.shape(noise) != [batch, self.config.latent] {
            return Err(Error::dim(format!(
                "VAE noise must be {batch}×{}, got {:?}",
                self.config.latent,
                tape.shape(noise)
            )));
        }
        let (mu, log_var) = self.encode(tape, vars, x)?;
        let half = tape.scale(log_var, 0.5)?;
        let sigma = tape.exp(half)?;
        let spread = tape.mul(sigma, noise)?;
        let z = tape.add(mu, spread)?;
        let reconstruction = self.decode(tape, vars, z)?;
        Ok(VaeOutput { reconstruction, mu, log_var, z })
    }

    /// Decodes `B×H` latent draws into coefficient vectors.
    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let z = tape.constant(z.clone());
        let out = self.decode(&mut tape, &vars, z)?;
        Ok(tape.value(out).clone())
    }
}

/// `mean((x − x̂)²) + beta · mean_b[−½·Σ_h(1 + log σ² − μ² − σ²)]`.
pub fn vae_loss<T: Float>(tape: &mut Tape<T>, x: Var, reconstruction: Var, mu: Var, log_var: Var, beta: f64) -> Result<VaeLoss> {
    if tape.shape(x) != tape.shape(reconstruction) {
        return Err(Error::dim(format!("VAE reconstruction {:?} vs input {:?}", tape.shape(reconstruction), tape.shape(x))));
    }
    if tape.shape(mu) != tape.shape(log_var) || tape.shape(mu).len() != 2 {
        return Err(Error::dim(format!("VAE μ {:?} and log σ² {:?} must be equal B×H", tape.shape(mu), tape.shape(log_var))));
    }
    let batch = tape.shape(mu)[0] as f64;
    let diff = tape.sub(reconstruction, x)?;
    let sq = tape.square(diff)?;
    let recon = tape.mean_all(sq)?;

    let one_plus = tape.unary(Unary::Shift(T::one()), log_var)?;
    let mu_sq = tape.square(mu)?;
    let var = tape.exp(log_var)?;
    let t = tape.sub(one_plus, mu_sq)?;
    let t = tape.sub(t, var)?;
    let s = tape.sum_all(t)?;
    let kl = tape.scale(s, -0.5 / batch)?;

    let weighted = tape.scale(kl, beta)?;
    let total = tape.add(recon, weighted)?;
    Ok(VaeLoss { total, recon, kl })
}

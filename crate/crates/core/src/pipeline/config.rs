use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::GeneratorOutput;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSource {
    Gaussian,
    Vae,
    Gan,
}

impl SampleSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Vae => "vae",
            Self::Gan => "gan",
        }
    }
}

impl FromStr for SampleSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "vae" => Ok(Self::Vae),
            "gan" => Ok(Self::Gan),
            _ => Err(Error::param(format!("unknown sample source {s:?} (gaussian, vae, gan)"))),
        }
    }
}

/// Every knob of the pipeline. Defaults reproduce the MNIST desk-scale
/// setup.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// IDX image file.
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    /// Leading images of the dataset to use.
    pub n_images: usize,
    pub scattering_j: usize,
    pub scattering_l: usize,
    pub n_components: usize,
    pub latent: usize,
    pub batch_size: usize,
    /// Leading whitened/image pairs used to train the decoder.
    pub decoder_images: usize,
    pub decoder_epochs: usize,
    pub decoder_lr: f64,
    pub vae_epochs: usize,
    pub vae_lr: f64,
    pub vae_beta: f64,
    pub gan_epochs: usize,
    pub gan_lr: f64,
    pub gan_beta1: f64,
    pub gan_output_relu: bool,
    pub sample_source: SampleSource,
    pub sample_count: usize,
    pub viz_c1: usize,
    pub viz_c2: usize,
    pub viz_values: Vec<f64>,
    /// Leading whitened rows fed to the normality tests; 0 means all.
    pub test_samples: usize,
    pub alpha_levels: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/mnist/train-images-idx3-ubyte"),
            out: PathBuf::from("out"),
            seed: 0,
            n_images: 10_000,
            scattering_j: 2,
            scattering_l: 8,
            n_components: 512,
            latent: 64,
            batch_size: 128,
            decoder_images: 1000,
            decoder_epochs: 50,
            decoder_lr: 1e-3,
            vae_epochs: 31,
            vae_lr: 1e-3,
            vae_beta: 0.001,
            gan_epochs: 30,
            gan_lr: 2e-4,
            gan_beta1: 0.5,
            gan_output_relu: false,
            sample_source: SampleSource::Gaussian,
            sample_count: 16,
            viz_c1: 0,
            viz_c2: 1,
            viz_values: vec![-10.0, -5.0, 5.0, 10.0],
            test_samples: 0,
            alpha_levels: vec![0.05, 0.01],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::param(format!("config key {key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = PathBuf::from(value),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "n_images" => self.n_images = parse(key, value)?,
            "scattering_j" => self.scattering_j = parse(key, value)?,
            "scattering_l" => self.scattering_l = parse(key, value)?,
            "n_components" => self.n_components = parse(key, value)?,
            "latent" => self.latent = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "decoder_images" => self.decoder_images = parse(key, value)?,
            "decoder_epochs" => self.decoder_epochs = parse(key, value)?,
            "decoder_lr" => self.decoder_lr = parse(key, value)?,
            "vae_epochs" => self.vae_epochs = parse(key, value)?,
            "vae_lr" => self.vae_lr = parse(key, value)?,
            "vae_beta" => self.vae_beta = parse(key, value)?,
            "gan_epochs" => self.gan_epochs = parse(key, value)?,
            "gan_lr" => self.gan_lr = parse(key, value)?,
            "gan_beta1" => self.gan_beta1 = parse(key, value)?,
            "gan_output_relu" => self.gan_output_relu = parse(key, value)?,
            "sample_source" => self.sample_source = value.parse()?,
            "sample_count" => self.sample_count = parse(key, value)?,
            "viz_c1" => self.viz_c1 = parse(key, value)?,
            "viz_c2" => self.viz_c2 = parse(key, value)?,
            "viz_values" => self.viz_values = parse_list(key, value)?,
            "test_samples" => self.test_samples = parse(key, value)?,
            "alpha_levels" => self.alpha_levels = parse_list(key, value)?,
            _ => return Err(Error::param(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Flat `key = value` text; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("config line {}: expected key = value, got {raw:?}", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components < 2 {
            return Err(Error::param("n_components must be at least 2"));
        }
        if self.latent == 0 || self.latent > self.n_components {
            return Err(Error::param(format!(
                "latent width {} must be in 1..={}",
                self.latent, self.n_components
            )));
        }
        if self.n_images < 2 || self.batch_size < 2 {
            return Err(Error::param("n_images and batch_size must be at least 2"));
        }
        if self.decoder_images < 2 || self.decoder_images > self.n_images {
            return Err(Error::param(format!("decoder_images must be in 2..={}", self.n_images)));
        }
        if self.alpha_levels.is_empty() || self.viz_values.is_empty() || self.sample_count == 0 {
            return Err(Error::param("alpha_levels, viz_values and sample_count must be nonempty"));
        }
        Ok(())
    }

    pub fn generator_output(&self) -> GeneratorOutput {
        if self.gan_output_relu {
            GeneratorOutput::Relu
        } else {
            GeneratorOutput::Linear
        }
    }
}

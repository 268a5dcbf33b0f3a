//! Conversions between trained models and [`ModelCheckpoint`]s. Each
//! checkpoint carries a `meta.config` vector from which the architecture is
//! rebuilt before the stored tensors are loaded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{ModelCheckpoint, ModelKind};
use crate::error::{Error, Result};
use crate::latent::PcaModel;
use crate::nn::{load_named, named_tensors, Decoder, DecoderConfig, GanConfig, GanModel, GeneratorOutput, VaeConfig, VaeModel};
use crate::tensor::Tensor;

const META: &str = "meta.config";

fn meta(values: Vec<f64>) -> Tensor<f64> {
    let n = values.len();
    Tensor::new(&[n], values).expect("nonempty meta vector")
}

fn read_meta(ck: &ModelCheckpoint, min_len: usize) -> Result<Vec<usize>> {
    let values = ck.get_f64(META)?.data();
    if values.len() < min_len || values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(Error::Format(format!("malformed {META} {values:?}")));
    }
    Ok(values.iter().map(|&v| v as usize).collect())
}

fn model_entries(ck: &ModelCheckpoint, prefix: &str) -> Vec<(String, Tensor<f32>)> {
    ck.typed::<f32>()
        .into_iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t)))
        .collect()
}

/// Architecture rebuild needs some RNG; the values are overwritten.
fn scratch_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

pub fn pca_to_checkpoint(model: &PcaModel) -> Result<ModelCheckpoint> {
    let (k, d) = (model.n_components(), model.dim());
    let mut ck = ModelCheckpoint::new(ModelKind::Pca);
    ck.push("mean", Tensor::new(&[d], model.mean.clone())?);
    ck.push("components", Tensor::new(&[k, d], model.components.clone())?);
    ck.push("eigenvalues", Tensor::new(&[k], model.eigenvalues.clone())?);
    ck.push("variance_floor", Tensor::new(&[1], vec![model.variance_floor])?);
    Ok(ck)
}

pub fn pca_from_checkpoint(ck: &ModelCheckpoint) -> Result<PcaModel> {
    PcaModel::from_parts(
        ck.get_f64("mean")?.data().to_vec(),
        ck.get_f64("components")?.data().to_vec(),
        ck.get_f64("eigenvalues")?.data().to_vec(),
        ck.get_f64("variance_floor")?.item()?,
    )
}

pub fn decoder_to_checkpoint(model: &Decoder<f32>) -> ModelCheckpoint {
    let c = &model.config;
    let mut values = vec![c.n_components, c.base_spatial, c.kernel_size, c.out_channels];
    values.extend(&c.channel_schedule);
    let mut ck = ModelCheckpoint::new(ModelKind::Decoder);
    ck.push(META, meta(values.into_iter().map(|v| v as f64).collect()));
    for (name, t) in named_tensors(&model.params, &model.stats) {
        ck.push(name, t);
    }
    ck
}

pub fn decoder_from_checkpoint(ck: &ModelCheckpoint) -> Result<Decoder<f32>> {
    let m = read_meta(ck, 5)?;
    let config = DecoderConfig {
        n_components: m[0],
        base_spatial: m[1],
        kernel_size: m[2],
        out_channels: m[3],
        channel_schedule: m[4..].to_vec(),
    };
    let mut model = Decoder::new(config, &mut scratch_rng())?;
    load_named(&mut model.params, &mut model.stats, &model_entries(ck, ""))?;
    Ok(model)
}

pub fn vae_to_checkpoint(model: &VaeModel<f32>) -> ModelCheckpoint {
    let c = model.config;
    let mut ck = ModelCheckpoint::new(ModelKind::Vae);
    ck.push(META, meta(vec![c.input as f64, c.latent as f64]));
    ck.push("meta.beta", meta(vec![c.beta]));
    for (name, t) in named_tensors(&model.params, &model.stats) {
        ck.push(name, t);
    }
    ck
}

pub fn vae_from_checkpoint(ck: &ModelCheckpoint) -> Result<VaeModel<f32>> {
    let m = read_meta(ck, 2)?;
    let beta = ck.get_f64("meta.beta")?.item()?;
    let mut model = VaeModel::new(VaeConfig { input: m[0], latent: m[1], beta }, &mut scratch_rng())?;
    load_named(&mut model.params, &mut model.stats, &model_entries(ck, ""))?;
    Ok(model)
}

pub fn gan_to_checkpoint(model: &GanModel<f32>) -> ModelCheckpoint {
    let c = model.config;
    let relu = matches!(c.output, GeneratorOutput::Relu);
    let mut ck = ModelCheckpoint::new(ModelKind::Gan);
    ck.push(META, meta(vec![c.data as f64, c.noise as f64, relu as u8 as f64]));
    for (name, t) in named_tensors(&model.generator, &model.generator_stats) {
        ck.push(format!("generator.{name}"), t);
    }
    for (name, t) in named_tensors(&model.discriminator, &model.discriminator_stats) {
        ck.push(format!("discriminator.{name}"), t);
    }
    ck
}

pub fn gan_from_checkpoint(ck: &ModelCheckpoint) -> Result<GanModel<f32>> {
    let m = read_meta(ck, 3)?;
    let output = if m[2] == 1 { GeneratorOutput::Relu } else { GeneratorOutput::Linear };
    let mut model = GanModel::new(GanConfig { data: m[0], noise: m[1], output }, &mut scratch_rng())?;
    load_named(&mut model.generator, &mut model.generator_stats, &model_entries(ck, "generator."))?;
    load_named(&mut model.discriminator, &mut model.discriminator_stats, &model_entries(ck, "discriminator."))?;
    Ok(model)
}

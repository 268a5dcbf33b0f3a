use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::grid::ImageGrid;
use crate::error::{Error, Result};
use crate::nn::{Decoder, GanModel, VaeModel};
use crate::tensor::Tensor;

/// Decoder batch size for inference.
const DECODE_CHUNK: usize = 256;

/// Source of artificial whitened coefficient vectors.
#[derive(Clone, Copy, Debug)]
pub enum LatentSampler<'a> {
    /// Independent standard normals in every component.
    Gaussian { n_components: usize },
    /// VAE decoder applied to `z ~ N(0, I_H)`.
    Vae(&'a VaeModel<f32>),
    /// Generator applied to `z ~ N(0, I_H)`.
    Gan(&'a GanModel<f32>),
}

fn standard_normal(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v as f32
    })
}

/// Draws `count` whitened coefficient vectors.
pub fn sample_latent(sampler: LatentSampler<'_>, count: usize, seed: u64) -> Result<Tensor<f32>> {
    if count == 0 {
        return Err(Error::param("sample count must be positive"));
    }
    match sampler {
        LatentSampler::Gaussian { n_components } => Ok(standard_normal(&[count, n_components], seed)),
        LatentSampler::Vae(vae) => vae.generate(&standard_normal(&[count, vae.config.latent], seed)),
        LatentSampler::Gan(gan) => gan.generate(&standard_normal(&[count, gan.config.noise], seed)),
    }
}

/// Draws `count` vectors, decodes them and lays the images out near-square.
pub fn sample_images(sampler: LatentSampler<'_>, count: usize, seed: u64, decoder: &Decoder<f32>) -> Result<ImageGrid> {
    let w = sample_latent(sampler, count, seed)?;
    if w.shape()[1] != decoder.config.n_components {
        return Err(Error::dim(format!(
            "sampled width {} does not match decoder input {}",
            w.shape()[1],
            decoder.config.n_components
        )));
    }
    let images = decoder.decode(&w, DECODE_CHUNK)?;
    let (rows, cols) = ImageGrid::layout(count);
    ImageGrid::from_batch(&images, rows, cols)
}

/// Tile `(i, j)` decodes the vector with component `c1 = values[i]`,
/// component `c2 = values[j]` and zeros elsewhere: going down a column
/// increases the first component, going right along a row the second.
pub fn visualization_matrix(c1: usize, c2: usize, values: &[f64], decoder: &Decoder<f32>) -> Result<ImageGrid> {
    let k = decoder.config.n_components;
    if c1 >= k || c2 >= k {
        return Err(Error::param(format!("component indices ({c1}, {c2}) must be below {k}")));
    }
    if c1 == c2 {
        return Err(Error::param("visualization needs two distinct components"));
    }
    if values.is_empty() {
        return Err(Error::param("visualization needs at least one component value"));
    }
    let n = values.len();
    let mut w = Tensor::<f32>::zeros(&[n * n, k]);
    for i in 0..n {
        for j in 0..n {
            let row = &mut w.data_mut()[(i * n + j) * k..(i * n + j + 1) * k];
            row[c1] = values[i] as f32;
            row[c2] = values[j] as f32;
        }
    }
    let images = decoder.decode(&w, DECODE_CHUNK)?;
    ImageGrid::from_batch(&images, n, n)
}

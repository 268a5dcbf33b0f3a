//! Translation-averaged 2D scattering transform of order ≤ 2 with Morlet
//! wavelets and circular (periodic) convolutions.
//!
//! For an image `x`, low-pass `φ` at scale `2^J` and wavelets `ψ_{j,l}`:
//!
//! * order 0: `φ * x`
//! * order 1: `φ * |ψ_{j1,l1} * x|`
//! * order 2: `φ * ||ψ_{j1,l1} * x| * ψ_{j2,l2}|`, `j2 > j1`
//!
//! each subsampled by `2^J` in both directions. Channels are scattered
//! independently.

mod fft;
mod filters;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use filters::{FilterBank, SIGMA0, SLANT, XI0};
use fft::Fft2;

/// Largest supported scale count.
pub const MAX_SCALES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScatteringConfig {
    /// Number of scales; the output is subsampled by `2^j`.
    pub j: usize,
    /// Number of orientations in `[0, π)`.
    pub l: usize,
    pub height: usize,
    pub width: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
}

impl ScatteringConfig {
    pub fn mnist() -> Self {
        Self { j: 2, l: 8, height: 28, width: 28, channels: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j < 1 || self.j > MAX_SCALES {
            return Err(Error::param(format!("J must be in 1..={MAX_SCALES}, got {}", self.j)));
        }
        if self.l < 1 {
            return Err(Error::param("L must be ≥ 1"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::param(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        let step = 1 << self.j;
        if self.height == 0 || self.width == 0 || self.height % step != 0 || self.width % step != 0 {
            return Err(Error::param(format!(
                "image size {}×{} is not divisible by 2^J = {step}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn subsampling(&self) -> usize {
        1 << self.j
    }

    pub fn output_height(&self) -> usize {
        self.height >> self.j
    }

    pub fn output_width(&self) -> usize {
        self.width >> self.j
    }

    /// `1 + J·L + L²·J(J−1)/2`
    pub fn path_count(&self) -> usize {
        1 + self.j * self.l + self.l * self.l * self.j * (self.j - 1) / 2
    }

    /// Length of one flattened coefficient vector.
    pub fn flat_dim(&self) -> usize {
        self.channels * self.path_count() * self.output_height() * self.output_width()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScatteringPath {
    Zeroth,
    First { j1: usize, l1: usize },
    Second { j1: usize, l1: usize, j2: usize, l2: usize },
}

impl ScatteringPath {
    pub fn order(&self) -> usize {
        match self {
            Self::Zeroth => 0,
            Self::First { .. } => 1,
            Self::Second { .. } => 2,
        }
    }
}

/// Paths in output order: order 0, then order 1 by `(j1, l1)`, then order 2
/// by `(j1, l1, j2, l2)`.
pub fn enumerate_paths(config: &ScatteringConfig) -> Vec<ScatteringPath> {
    let (nj, nl) = (config.j, config.l);
    let mut paths = vec![ScatteringPath::Zeroth];
    for j1 in 0..nj {
        for l1 in 0..nl {
            paths.push(ScatteringPath::First { j1, l1 });
        }
    }
    for j1 in 0..nj {
        for l1 in 0..nl {
            for j2 in (j1 + 1)..nj {
                for l2 in 0..nl {
                    paths.push(ScatteringPath::Second { j1, l1, j2, l2 });
                }
            }
        }
    }
    paths
}

#[derive(Clone, Debug)]
pub struct ScatteringOutput {
    /// `B × (channels·P) × H/2^J × W/2^J`, channel-major: index `c·P + p`.
    pub coefficients: Tensor<f64>,
    pub paths: Vec<ScatteringPath>,
}

/// How the circular convolutions are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvolutionMethod {
    /// Products of 2D spectra; the low-pass output is computed directly at
    /// the subsampled resolution by periodizing the spectrum.
    #[default]
    Fourier,
    /// Spatial-domain sums at full resolution, subsampled afterwards.
    Direct,
}

/// Scatters a `B × C × H × W` batch of images.
pub fn scatter(images: &Tensor<f64>, bank: &FilterBank, config: &ScatteringConfig) -> Result<ScatteringOutput> {
    scatter_with(images, bank, config, ConvolutionMethod::Fourier)
}

pub fn scatter_with(
    images: &Tensor<f64>,
    bank: &FilterBank,
    config: &ScatteringConfig,
    method: ConvolutionMethod,
) -> Result<ScatteringOutput> {
    config.validate()?;
    let expected = [config.channels, config.height, config.width];
    let batch = match images.shape() {
        [b, rest @ ..] if rest == expected => *b,
        other => {
            return Err(Error::dim(format!(
                "images of shape {other:?} do not match B×{}×{}×{}",
                config.channels, config.height, config.width
            )))
        }
    };
    if bank.height() != config.height
        || bank.width() != config.width
        || bank.scales() != config.j
        || bank.orientations() != config.l
    {
        return Err(Error::dim("filter bank was built for a different configuration"));
    }
    let paths = enumerate_paths(config);
    let plane = config.height * config.width;
    let per_channel = paths.len() * config.output_height() * config.output_width();
    let mut data = Vec::with_capacity(batch * config.channels * per_channel);
    let mut engine = Engine::new(bank, config);
    for img in images.data().chunks(plane) {
        match method {
            ConvolutionMethod::Fourier => engine.scatter_fourier(img, &mut data),
            ConvolutionMethod::Direct => engine.scatter_direct(img, &mut data),
        }
    }
    let coefficients = Tensor::new(
        &[batch, config.channels * paths.len(), config.output_height(), config.output_width()],
        data,
    )?;
    Ok(ScatteringOutput { coefficients, paths })
}

impl ScatteringOutput {
    /// Consuming form of [`flatten_coefficients`].
    pub fn into_flat(self) -> Tensor<f64> {
        let b = self.coefficients.shape()[0];
        let d = self.coefficients.numel() / b;
        self.coefficients.reshape(&[b, d]).expect("same element count")
    }
}

/// Row-major flattening to `B × D`. The layout within a row is
/// `(channel, path, row, column)`.
pub fn flatten_coefficients(out: &ScatteringOutput) -> Tensor<f64> {
    let b = out.coefficients.shape()[0];
    let d = out.coefficients.numel() / b;
    out.coefficients.clone().reshape(&[b, d]).expect("same element count")
}

struct Engine<'a> {
    bank: &'a FilterBank,
    config: ScatteringConfig,
    full: Fft2,
    small: Fft2,
}

impl<'a> Engine<'a> {
    fn new(bank: &'a FilterBank, config: &ScatteringConfig) -> Self {
        Self {
            bank,
            config: *config,
            full: Fft2::new(config.height, config.width),
            small: Fft2::new(config.output_height(), config.output_width()),
        }
    }

    fn scatter_fourier(&mut self, img: &[f64], out: &mut Vec<f64>) {
        let (nj, nl) = (self.config.j, self.config.l);
        let mut x_hat: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.full.forward(&mut x_hat);
        let mut order2 = Vec::new();
        self.lowpass_subsampled(&x_hat, out);
        let mut u1_hats = Vec::with_capacity(nj * nl);
        for j1 in 0..nj {
            for l1 in 0..nl {
                let u1_hat = self.modulus_spectrum(&x_hat, self.bank.psi_hat(j1, l1));
                self.lowpass_subsampled(&u1_hat, out);
                u1_hats.push(u1_hat);
            }
        }
        for j1 in 0..nj {
            for l1 in 0..nl {
                let u1_hat = &u1_hats[j1 * nl + l1];
                for j2 in (j1 + 1)..nj {
                    for l2 in 0..nl {
                        let u2_hat = self.modulus_spectrum(u1_hat, self.bank.psi_hat(j2, l2));
                        self.lowpass_subsampled(&u2_hat, &mut order2);
                    }
                }
            }
        }
        out.extend(order2);
    }

    /// Spectrum of `|ψ * u|` given the spectrum of `u`.
    fn modulus_spectrum(&mut self, u_hat: &[Complex64], psi_hat: &[Complex64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = u_hat.iter().zip(psi_hat).map(|(a, b)| a * b).collect();
        self.full.inverse(&mut buf);
        buf.iter_mut().for_each(|z| *z = Complex64::new(z.norm(), 0.0));
        self.full.forward(&mut buf);
        buf
    }

    /// Appends `(φ * u)` subsampled by `2^J`, computed from the spectrum of `u`.
    fn lowpass_subsampled(&mut self, u_hat: &[Complex64], out: &mut Vec<f64>) {
        let (h, w) = (self.config.height, self.config.width);
        let (sh, sw) = (self.config.output_height(), self.config.output_width());
        let phi_hat = self.bank.phi_hat();
        let mut small = vec![Complex64::new(0.0, 0.0); sh * sw];
        for r in 0..h {
            for c in 0..w {
                small[(r % sh) * sw + c % sw] += u_hat[r * w + c] * phi_hat[r * w + c];
            }
        }
        self.small.inverse(&mut small);
        let k2 = (self.config.subsampling() * self.config.subsampling()) as f64;
        out.extend(small.iter().map(|z| z.re / k2));
    }

    fn scatter_direct(&mut self, img: &[f64], out: &mut Vec<f64>) {
        let (nj, nl) = (self.config.j, self.config.l);
        let (h, w) = (self.config.height, self.config.width);
        let x: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let phi: Vec<Complex64> = self.bank.phi().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let lowpass = |u: &[Complex64], out: &mut Vec<f64>| {
            let y = circular_convolve(u, &phi, h, w);
            let k = self.config.subsampling();
            for r in (0..h).step_by(k) {
                for c in (0..w).step_by(k) {
                    out.push(y[r * w + c].re);
                }
            }
        };
        let modulus = |u: &[Complex64], f: &[Complex64]| -> Vec<Complex64> {
            circular_convolve(u, f, h, w).into_iter().map(|z| Complex64::new(z.norm(), 0.0)).collect()
        };
        lowpass(&x, out);
        let mut u1s = Vec::new();
        for j1 in 0..nj {
            for l1 in 0..nl {
                let u1 = modulus(&x, self.bank.psi(j1, l1));
                lowpass(&u1, out);
                u1s.push(u1);
            }
        }
        for j1 in 0..nj {
            for l1 in 0..nl {
                for j2 in (j1 + 1)..nj {
                    for l2 in 0..nl {
                        let u2 = modulus(&u1s[j1 * nl + l1], self.bank.psi(j2, l2));
                        lowpass(&u2, out);
                    }
                }
            }
        }
    }
}

/// `y[r, c] = Σ_{a,b} f[a, b] · u[(r − a) mod h, (c − b) mod w]`
pub fn circular_convolve(u: &[Complex64], f: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); h * w];
    for a in 0..h {
        for b in 0..w {
            let fv = f[a * w + b];
            if fv == Complex64::new(0.0, 0.0) {
                continue;
            }
            for r in 0..h {
                let ur = &u[((r + h - a) % h) * w..][..w];
                let yr = &mut y[r * w..(r + 1) * w];
                for (c, yv) in yr.iter_mut().enumerate() {
                    *yv += fv * ur[(c + w - b) % w];
                }
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_counts() {
        let c = |j, l| ScatteringConfig { j, l, height: 16, width: 16, channels: 1 };
        assert_eq!(enumerate_paths(&c(2, 8)).len(), 81);
        assert_eq!(enumerate_paths(&c(4, 8)).len(), 417);
        for l in 1..=8 {
            let p = enumerate_paths(&c(1, l));
            assert_eq!(p.len(), 1 + l);
            assert!(p.iter().all(|p| p.order() < 2));
        }
    }

    #[test]
    fn config_validation() {
        let mut c = ScatteringConfig::mnist();
        assert!(c.validate().is_ok());
        c.height = 30;
        assert!(c.validate().is_err());
        let c = ScatteringConfig { j: 0, ..ScatteringConfig::mnist() };
        assert!(c.validate().is_err());
        let c = ScatteringConfig { channels: 2, ..ScatteringConfig::mnist() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_image_scatters_to_zero() {
        let cfg = ScatteringConfig::mnist();
        let bank = FilterBank::build(&cfg).unwrap();
        let out = scatter(&Tensor::zeros(&[1, 1, 28, 28]), &bank, &cfg).unwrap();
        assert_eq!(out.coefficients.shape(), &[1, 81, 7, 7]);
        assert!(out.coefficients.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let cfg = ScatteringConfig::mnist();
        let bank = FilterBank::build(&cfg).unwrap();
        assert!(matches!(scatter(&Tensor::zeros(&[1, 1, 28, 24]), &bank, &cfg), Err(Error::Dimension(_))));
    }
}

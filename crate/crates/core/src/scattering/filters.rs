//! Morlet band-pass and Gaussian low-pass filters, sampled on a periodic grid.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::fft::Fft2;
use super::ScatteringConfig;

/// Center frequency of the finest Morlet wavelet (radians per pixel).
pub const XI0: f64 = 3.0 * PI / 4.0;
/// Envelope width of the finest wavelet; scale `j` uses `SIGMA0 · 2^j`.
pub const SIGMA0: f64 = 0.8;
/// Aspect ratio of the Morlet envelope across the oscillation direction.
pub const SLANT: f64 = 0.5;

/// Spatial filters at full image resolution plus their 2D spectra.
///
/// Index `(i, j)` of a spatial filter holds its value at displacement
/// `(i, j)` taken modulo the image size, so `(0, 0)` is the filter center.
#[derive(Clone, Debug)]
pub struct FilterBank {
    height: usize,
    width: usize,
    scales: usize,
    orientations: usize,
    psi: Vec<Vec<Complex64>>,
    phi: Vec<f64>,
    psi_hat: Vec<Vec<Complex64>>,
    phi_hat: Vec<Complex64>,
}

impl FilterBank {
    /// Builds `J·L` Morlet wavelets and one Gaussian low-pass at scale `2^J`.
    pub fn build(config: &ScatteringConfig) -> crate::Result<Self> {
        config.validate()?;
        let (h, w) = (config.height, config.width);
        let mut psi = Vec::with_capacity(config.j * config.l);
        for j in 0..config.j {
            for l in 0..config.l {
                let theta = l as f64 * PI / config.l as f64;
                psi.push(morlet(h, w, SIGMA0 * 2f64.powi(j as i32), theta, XI0 / 2f64.powi(j as i32), SLANT));
            }
        }
        let sigma_phi = SIGMA0 * 2f64.powi(config.j as i32);
        let g = gabor(h, w, sigma_phi, 0.0, 0.0, 1.0);
        let total: f64 = g.iter().map(|z| z.re).sum();
        let phi: Vec<f64> = g.iter().map(|z| z.re / total).collect();

        let mut fft = Fft2::new(h, w);
        let psi_hat = psi
            .iter()
            .map(|f| {
                let mut buf = f.clone();
                fft.forward(&mut buf);
                buf
            })
            .collect();
        let mut phi_hat: Vec<Complex64> = phi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut phi_hat);
        Ok(Self { height: h, width: w, scales: config.j, orientations: config.l, psi, phi, psi_hat, phi_hat })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn psi_count(&self) -> usize {
        self.psi.len()
    }

    /// Band-pass filter at scale `j`, orientation `l`.
    pub fn psi(&self, j: usize, l: usize) -> &[Complex64] {
        &self.psi[j * self.orientations + l]
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub(crate) fn psi_hat(&self, j: usize, l: usize) -> &[Complex64] {
        &self.psi_hat[j * self.orientations + l]
    }

    pub(crate) fn phi_hat(&self) -> &[Complex64] {
        &self.phi_hat
    }
}

/// Zero-mean Morlet: a Gabor filter minus a multiple of its envelope.
fn morlet(h: usize, w: usize, sigma: f64, theta: f64, xi: f64, slant: f64) -> Vec<Complex64> {
    let wave = gabor(h, w, sigma, theta, xi, slant);
    let envelope = gabor(h, w, sigma, theta, 0.0, slant);
    let k = wave.iter().sum::<Complex64>() / envelope.iter().sum::<Complex64>();
    wave.iter().zip(&envelope).map(|(a, b)| a - k * b).collect()
}

/// Periodized Gabor filter `exp(-uᵀ R D Rᵀ u / 2σ²) · exp(i ξ ⟨u, e_θ⟩)` with
/// `D = diag(1, slant²)`, normalized by `2πσ²/slant`.
fn gabor(h: usize, w: usize, sigma: f64, theta: f64, xi: f64, slant: f64) -> Vec<Complex64> {
    let (c, s) = (theta.cos(), theta.sin());
    let s2 = 2.0 * sigma * sigma;
    // R D Rᵀ / 2σ²
    let a = (c * c + slant * slant * s * s) / s2;
    let b = (c * s * (1.0 - slant * slant)) / s2;
    let d = (s * s + slant * slant * c * c) / s2;
    let (kx, ky) = (xi * c, xi * s);
    let norm = 2.0 * PI * sigma * sigma / slant;
    // enough periods that the envelope has decayed past 8σ/slant
    let reach = 8.0 * sigma / slant;
    let pr = (reach / h as f64).ceil() as i64 + 1;
    let pc = (reach / w as f64).ceil() as i64 + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in -pr..=pr {
                let x = i as f64 + (p * h as i64) as f64;
                for q in -pc..=pc {
                    let y = j as f64 + (q * w as i64) as f64;
                    let e = (-(a * x * x + 2.0 * b * x * y + d * y * y)).exp();
                    if e == 0.0 {
                        continue;
                    }
                    acc += Complex64::from_polar(e, kx * x + ky * y);
                }
            }
            out[i * w + j] = acc / norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(j: usize, l: usize, n: usize) -> ScatteringConfig {
        ScatteringConfig { j, l, height: n, width: n, channels: 1 }
    }

    #[test]
    fn minimal_bank() {
        let bank = FilterBank::build(&cfg(1, 1, 8)).unwrap();
        assert_eq!(bank.psi_count(), 1);
        assert_eq!(bank.phi().len(), 64);
    }

    #[test]
    fn psi_zero_mean_and_phi_normalized() {
        for j in 1..=4 {
            let bank = FilterBank::build(&cfg(j, 8, 32)).unwrap();
            let total: f64 = bank.phi().iter().sum();
            assert!((total - 1.0).abs() < 1e-6, "J={j}: phi sums to {total}");
            assert!(bank.phi().iter().all(|&v| v >= 0.0));
            for s in 0..j {
                for l in 0..8 {
                    let f = bank.psi(s, l);
                    let peak = f.iter().map(|z| z.norm()).fold(0.0, f64::max);
                    let mean = f.iter().sum::<Complex64>() / f.len() as f64;
                    assert!(mean.norm() < 1e-6 * peak, "j={s} l={l}");
                }
            }
        }
    }
}

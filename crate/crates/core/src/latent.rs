//! PCA on flattened scattering coefficients and the whitening map between
//! coefficient space and unit-variance principal coordinates.

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Tensor;

/// Number of principal components kept by default.
pub const DEFAULT_COMPONENTS: usize = 512;
/// Relative size of the variance floor added before dividing by `sqrt(λ)`.
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    /// Column means, length `dim`.
    pub mean: Vec<f64>,
    /// `n_components × dim`, orthonormal rows, largest-variance first.
    pub components: Vec<f64>,
    /// Sample-covariance eigenvalues, descending and nonnegative.
    pub eigenvalues: Vec<f64>,
    pub variance_floor: f64,
}

/// Whitened principal coefficients, `B × n_components`.
#[derive(Clone, Debug, PartialEq)]
pub struct WhitenedCoeffs {
    pub values: Tensor<f64>,
}

impl WhitenedCoeffs {
    pub fn new(values: Tensor<f64>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::dim(format!("whitened coefficients must be B×K, got {:?}", values.shape())));
        }
        Ok(Self { values })
    }

    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim()..(i + 1) * self.dim()]
    }

    fn scales(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|&l| (l + self.variance_floor).sqrt()).collect()
    }

    /// Assembles a model from stored parts, checking the shape invariants.
    pub fn from_parts(mean: Vec<f64>, components: Vec<f64>, eigenvalues: Vec<f64>, variance_floor: f64) -> Result<Self> {
        if eigenvalues.is_empty() || components.len() != eigenvalues.len() * mean.len() {
            return Err(Error::dim(format!(
                "{} components of width {} do not fill {} entries",
                eigenvalues.len(),
                mean.len(),
                components.len()
            )));
        }
        Ok(Self { mean, components, eigenvalues, variance_floor })
    }
}

/// Fits PCA to `n × D` data, keeping the `n_components` directions of largest
/// sample variance (normalization `1/(n−1)`). Uses the `D × D` covariance when
/// `n ≥ D` and the `n × n` Gram matrix otherwise.
pub fn fit_pca(data: &Tensor<f64>, n_components: usize) -> Result<PcaModel> {
    let [n, d] = data.shape()[..] else {
        return Err(Error::dim(format!("fit_pca expects n×D data, got {:?}", data.shape())));
    };
    if n < 2 {
        return Err(Error::param(format!("fit_pca needs at least 2 samples, got {n}")));
    }
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::param(format!(
            "n_components = {n_components} must be in 1..={} for {n} samples of width {d}",
            n.min(d)
        )));
    }
    if !data.is_finite() {
        return Err(Error::NumericDomain("fit_pca input contains non-finite values".into()));
    }
    let mut mean = vec![0.0; d];
    for row in data.data().chunks(d) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = data.data().chunks(d).flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m)).collect();
    let norm = 1.0 / (n - 1) as f64;

    let (mut eigenvalues, mut components) = if n >= d {
        let cov = linalg::syrk(true, d, n, norm, &centered);
        linalg::top_eigenpairs(&cov, d, n_components)?
    } else {
        let gram = linalg::syrk(false, n, d, norm, &centered);
        let (values, vectors) = linalg::top_eigenpairs(&gram, n, n_components)?;
        // u = Xᵀv / ‖Xᵀv‖
        let mut comps = vec![0.0; n_components * d];
        linalg::dgemm(false, false, n_components, d, n, 1.0, &vectors, &centered, 0.0, &mut comps);
        (values, comps)
    };
    eigenvalues.iter_mut().for_each(|l| *l = l.max(0.0));
    orthonormalize(&mut components, n_components, d);
    for row in components.chunks_mut(d) {
        let (mut best, mut idx) = (0.0, 0);
        for (i, v) in row.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                idx = i;
            }
        }
        if row[idx] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let variance_floor = VARIANCE_FLOOR_RATIO * eigenvalues[0];
    Ok(PcaModel { mean, components, eigenvalues, variance_floor })
}

/// Modified Gram–Schmidt over rows. Rows that vanish (null directions of a
/// rank-deficient Gram matrix) are replaced by the first standard basis
/// vector not yet spanned.
fn orthonormalize(rows: &mut [f64], count: usize, d: usize) {
    let mut basis = 0;
    for i in 0..count {
        let (done, rest) = rows.split_at_mut(i * d);
        let row = &mut rest[..d];
        let original: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        project_out(row, done, d);
        let mut len: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        while len <= 1e-10 * original.max(1e-300) && basis < d {
            row.fill(0.0);
            row[basis] = 1.0;
            basis += 1;
            project_out(row, done, d);
            len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 1e-6 {
                break;
            }
        }
        row.iter_mut().for_each(|v| *v /= len);
    }
}

fn project_out(row: &mut [f64], done: &[f64], d: usize) {
    for prev in done.chunks(d) {
        let dot: f64 = prev.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        row.iter_mut().zip(prev).for_each(|(r, p)| *r -= dot * p);
    }
}

/// `w = C (x − mean) / sqrt(λ + floor)` row by row.
pub fn whiten(model: &PcaModel, flat: &Tensor<f64>) -> Result<WhitenedCoeffs> {
    let d = model.dim();
    let [b, width] = flat.shape()[..] else {
        return Err(Error::dim(format!("whiten expects B×D input, got {:?}", flat.shape())));
    };
    if width != d {
        return Err(Error::dim(format!("whiten: input width {width} does not match PCA dimension {d}")));
    }
    let k = model.n_components();
    let centered: Vec<f64> = flat.data().chunks(d).flat_map(|row| row.iter().zip(&model.mean).map(|(x, m)| x - m)).collect();
    let mut w = vec![0.0; b * k];
    linalg::dgemm(false, true, b, k, d, 1.0, &centered, &model.components, 0.0, &mut w);
    let scales = model.scales();
    for row in w.chunks_mut(k) {
        row.iter_mut().zip(&scales).for_each(|(v, s)| *v /= s);
    }
    WhitenedCoeffs::new(Tensor::new(&[b, k], w)?)
}

/// `x̂ = mean + Cᵀ (w ⊙ sqrt(λ + floor))` row by row.
pub fn unwhiten(model: &PcaModel, w: &WhitenedCoeffs) -> Result<Tensor<f64>> {
    let k = model.n_components();
    if w.width() != k {
        return Err(Error::dim(format!("unwhiten: width {} does not match {k} components", w.width())));
    }
    let (b, d) = (w.batch(), model.dim());
    let scales = model.scales();
    let scaled: Vec<f64> = w.values.data().chunks(k).flat_map(|row| row.iter().zip(&scales).map(|(v, s)| v * s)).collect();
    let mut x: Vec<f64> = (0..b).flat_map(|_| model.mean.iter().copied()).collect();
    linalg::dgemm(false, false, b, d, k, 1.0, &scaled, &model.components, 1.0, &mut x);
    Tensor::new(&[b, d], x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_data() {
        let v = [3.0, 4.0, 0.0];
        let data = Tensor::from_fn(&[6, 3], |i| (i / 3) as f64 * v[i % 3]);
        let pca = fit_pca(&data, 2).unwrap();
        let c0 = pca.component(0);
        assert!((c0[0] - 0.6).abs() < 1e-12 && (c0[1] - 0.8).abs() < 1e-12);
        assert!(pca.eigenvalues[1].abs() < 1e-10);
        let dot: f64 = c0.iter().zip(pca.component(1)).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-10);
    }

    #[test]
    fn whiten_mean_is_zero_and_basis_unwhitens() {
        let data = Tensor::from_fn(&[20, 4], |i| ((i * 7919) % 97) as f64 / 97.0 + (i % 4) as f64);
        let pca = fit_pca(&data, 3).unwrap();
        let mean = Tensor::new(&[1, 4], pca.mean.clone()).unwrap();
        let w = whiten(&pca, &mean).unwrap();
        assert!(w.values.data().iter().all(|&v| v == 0.0));
        let back = unwhiten(&pca, &WhitenedCoeffs::new(Tensor::zeros(&[1, 3])).unwrap()).unwrap();
        assert_eq!(back.data(), pca.mean.as_slice());

        let mut e0 = Tensor::zeros(&[1, 3]);
        e0.data_mut()[0] = 1.0;
        let x = unwhiten(&pca, &WhitenedCoeffs::new(e0).unwrap()).unwrap();
        let s = (pca.eigenvalues[0] + pca.variance_floor).sqrt();
        for (i, v) in x.data().iter().enumerate() {
            assert!((v - (pca.mean[i] + s * pca.component(0)[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn input_validation() {
        let data = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(fit_pca(&data, 3), Err(Error::Parameter(_))));
        assert!(matches!(fit_pca(&Tensor::zeros(&[1, 2]), 1), Err(Error::Parameter(_))));
        let mut bad = Tensor::<f64>::ones(&[3, 2]);
        bad.data_mut()[0] = f64::NAN;
        assert!(matches!(fit_pca(&bad, 1), Err(Error::NumericDomain(_))));
        let pca = fit_pca(&Tensor::from_fn(&[4, 2], |i| (i * i) as f64), 1).unwrap();
        assert!(matches!(whiten(&pca, &Tensor::zeros(&[1, 3])), Err(Error::Dimension(_))));
        let w = WhitenedCoeffs::new(Tensor::zeros(&[1, 2])).unwrap();
        assert!(matches!(unwhiten(&pca, &w), Err(Error::Dimension(_))));
    }
}

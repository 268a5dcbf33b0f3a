//! Python bindings. Arrays cross the boundary as flat lists of floats plus
//! a shape tuple, so the module has no NumPy dependency.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use scatgen_core::latent::{self, WhitenedCoeffs};
use scatgen_core::nn::{Decoder, GanModel, VaeModel};
use scatgen_core::pipeline::checkpoint::{ModelCheckpoint, ModelKind};
use scatgen_core::pipeline::models;
use scatgen_core::pipeline::{self as pl, LatentSampler, PipelineConfig, Stage};
use scatgen_core::scattering::{self, FilterBank, ScatteringConfig};
use scatgen_core::stats::{self, NormalityTest};
use scatgen_core::tensor::Tensor;
use scatgen_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Dimension(_) | Error::Parameter(_) | Error::NumericDomain(_) | Error::DegenerateSample(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn tensor<T: scatgen_core::tensor::Float>(shape: &[usize], data: Vec<T>) -> PyResult<Tensor<T>> {
    Tensor::new(shape, data).map_err(py_err)
}

fn rows_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows have unequal lengths"));
    }
    let n = rows.len();
    tensor(&[n, width], rows.into_iter().flatten().collect())
}

fn to_rows<T: scatgen_core::tensor::Float>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    let width = t.numel() / t.shape()[0];
    t.data().chunks(width).map(|r| r.iter().map(|v| v.f64()).collect()).collect()
}

/// Scattering coefficients of `n×channels×height×width` images given flat.
/// Returns `(flat, shape)` with shape `(n, channels·paths, height/2^j, width/2^j)`.
#[pyfunction]
#[pyo3(signature = (images, shape, j = 2, l = 8))]
fn scatter(images: Vec<f64>, shape: (usize, usize, usize, usize), j: usize, l: usize) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let (n, channels, height, width) = shape;
    let config = ScatteringConfig { j, l, height, width, channels };
    let bank = FilterBank::build(&config).map_err(py_err)?;
    let out = scattering::scatter(&tensor(&[n, channels, height, width], images)?, &bank, &config).map_err(py_err)?;
    let shape = out.coefficients.shape().to_vec();
    Ok((out.coefficients.into_data(), shape))
}

/// Number of scattering paths `1 + J·L + L²·J(J−1)/2`.
#[pyfunction]
fn path_count(j: usize, l: usize) -> usize {
    ScatteringConfig { j, l, height: 1 << j, width: 1 << j, channels: 1 }.path_count()
}

/// Reads an IDX image file: `(flat pixels in [0, 1], (n, 1, rows, cols))`.
#[pyfunction]
fn read_idx_images(path: PathBuf) -> PyResult<(Vec<f32>, Vec<usize>)> {
    let t = pl::ingest_mnist(&path).map_err(py_err)?;
    let shape = t.shape().to_vec();
    Ok((t.into_data(), shape))
}

#[pyclass(name = "PcaModel", module = "scatgen")]
struct PyPcaModel {
    inner: latent::PcaModel,
}

#[pymethods]
impl PyPcaModel {
    #[staticmethod]
    fn fit(rows: Vec<Vec<f64>>, n_components: usize) -> PyResult<Self> {
        Ok(Self { inner: latent::fit_pca(&rows_tensor(rows)?, n_components).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = ModelCheckpoint::load_kind(&path, ModelKind::Pca).map_err(py_err)?;
        Ok(Self { inner: models::pca_from_checkpoint(&ck).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        models::pca_to_checkpoint(&self.inner).and_then(|ck| ck.save(&path)).map_err(py_err)
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues.clone()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }

    fn component(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.n_components() {
            return Err(PyValueError::new_err(format!("component {i} out of range")));
        }
        Ok(self.inner.component(i).to_vec())
    }

    fn whiten(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let w = latent::whiten(&self.inner, &rows_tensor(rows)?).map_err(py_err)?;
        Ok(to_rows(&w.values))
    }

    fn unwhiten(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let w = WhitenedCoeffs::new(rows_tensor(rows)?).map_err(py_err)?;
        Ok(to_rows(&latent::unwhiten(&self.inner, &w).map_err(py_err)?))
    }

    fn __repr__(&self) -> String {
        format!("PcaModel(dim={}, n_components={})", self.inner.dim(), self.inner.n_components())
    }
}

#[pyclass(name = "Decoder", module = "scatgen")]
struct PyDecoder {
    inner: Decoder<f32>,
}

#[pymethods]
impl PyDecoder {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = ModelCheckpoint::load_kind(&path, ModelKind::Decoder).map_err(py_err)?;
        Ok(Self { inner: models::decoder_from_checkpoint(&ck).map_err(py_err)? })
    }

    #[getter]
    fn n_components(&self) -> usize {
        self.inner.config.n_components
    }

    /// Decodes whitened rows; returns `(flat images, (B, C, H, W))`.
    fn decode(&self, rows: Vec<Vec<f64>>) -> PyResult<(Vec<f32>, Vec<usize>)> {
        let out = self.inner.decode(&rows_tensor(rows)?.cast(), 256).map_err(py_err)?;
        let shape = out.shape().to_vec();
        Ok((out.into_data(), shape))
    }

    /// PGM/PPM bytes of a `rows×cols` grid of decodes.
    fn grid(&self, rows: Vec<Vec<f64>>, grid_rows: usize, grid_cols: usize) -> PyResult<Vec<u8>> {
        let out = self.inner.decode(&rows_tensor(rows)?.cast(), 256).map_err(py_err)?;
        Ok(pl::ImageGrid::from_batch(&out, grid_rows, grid_cols).map_err(py_err)?.to_pnm())
    }

    /// Grid over two components; tile `(i, j)` sets `c1 = values[i]`, `c2 = values[j]`.
    fn visualization_matrix(&self, c1: usize, c2: usize, values: Vec<f64>) -> PyResult<Vec<u8>> {
        Ok(pl::visualization_matrix(c1, c2, &values, &self.inner).map_err(py_err)?.to_pnm())
    }

    /// PGM/PPM bytes of `count` decoded samples from `source`
    /// (`"gaussian"`, or a `VaeModel` / `GanModel`).
    #[pyo3(signature = (count, seed, source = None))]
    fn sample(&self, count: usize, seed: u64, source: Option<&Bound<'_, PyAny>>) -> PyResult<Vec<u8>> {
        let gaussian = LatentSampler::Gaussian { n_components: self.inner.config.n_components };
        let grid = match source {
            None => pl::sample_images(gaussian, count, seed, &self.inner),
            Some(obj) => {
                if let Ok(vae) = obj.cast::<PyVaeModel>() {
                    pl::sample_images(LatentSampler::Vae(&vae.borrow().inner), count, seed, &self.inner)
                } else if let Ok(gan) = obj.cast::<PyGanModel>() {
                    pl::sample_images(LatentSampler::Gan(&gan.borrow().inner), count, seed, &self.inner)
                } else if obj.extract::<String>().is_ok_and(|s| s == "gaussian") {
                    pl::sample_images(gaussian, count, seed, &self.inner)
                } else {
                    return Err(PyValueError::new_err("source must be \"gaussian\", a VaeModel or a GanModel"));
                }
            }
        };
        Ok(grid.map_err(py_err)?.to_pnm())
    }
}

#[pyclass(name = "VaeModel", module = "scatgen")]
struct PyVaeModel {
    inner: VaeModel<f32>,
}

#[pymethods]
impl PyVaeModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = ModelCheckpoint::load_kind(&path, ModelKind::Vae).map_err(py_err)?;
        Ok(Self { inner: models::vae_from_checkpoint(&ck).map_err(py_err)? })
    }

    #[getter]
    fn latent(&self) -> usize {
        self.inner.config.latent
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.config.beta
    }

    /// Decoder half applied to latent rows `z`.
    fn generate(&self, z: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.generate(&rows_tensor(z)?.cast()).map_err(py_err)?))
    }
}

#[pyclass(name = "GanModel", module = "scatgen")]
struct PyGanModel {
    inner: GanModel<f32>,
}

#[pymethods]
impl PyGanModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = ModelCheckpoint::load_kind(&path, ModelKind::Gan).map_err(py_err)?;
        Ok(Self { inner: models::gan_from_checkpoint(&ck).map_err(py_err)? })
    }

    #[getter]
    fn noise(&self) -> usize {
        self.inner.config.noise
    }

    fn generate(&self, z: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.generate(&rows_tensor(z)?.cast()).map_err(py_err)?))
    }

    /// Discriminator probabilities, normalizing with the running statistics.
    fn score(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let s = self.inner.score(&rows_tensor(rows)?.cast(), scatgen_core::tensor::BatchNormMode::Eval).map_err(py_err)?;
        Ok(s.data().iter().map(|&v| v as f64).collect())
    }
}

/// `(statistic, p_value)` of the Jarque–Bera test.
#[pyfunction]
fn jarque_bera(sample: Vec<f64>) -> PyResult<(f64, f64)> {
    Ok(stats::jarque_bera(&stats::moments(&sample).map_err(py_err)?))
}

/// `(statistic, p_value)` of D'Agostino's K² test.
#[pyfunction]
fn dagostino_k2(sample: Vec<f64>) -> PyResult<(f64, f64)> {
    stats::dagostino_k2(&stats::moments(&sample).map_err(py_err)?).map_err(py_err)
}

/// Tests every column of `rows`; returns a dict with per-component records,
/// rejection counts per test and alpha, and untestable columns.
#[pyfunction]
#[pyo3(signature = (rows, alpha_levels = vec![0.05, 0.01]))]
fn normality_report<'py>(py: Python<'py>, rows: Vec<Vec<f64>>, alpha_levels: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let w = WhitenedCoeffs::new(rows_tensor(rows)?).map_err(py_err)?;
    let report = stats::test_all_components(&w, &alpha_levels).map_err(py_err)?;
    let out = PyDict::new(py);
    let records: Vec<(usize, f64, f64, f64, f64)> =
        report.records.iter().map(|r| (r.component, r.k2_stat, r.k2_p, r.jb_stat, r.jb_p)).collect();
    out.set_item("records", records)?;
    for test in NormalityTest::ALL {
        let counts: Vec<(f64, usize)> = alpha_levels.iter().map(|&a| (a, report.rejections(test, a))).collect();
        out.set_item(test.label(), counts)?;
    }
    out.set_item("untestable", report.untestable.clone())?;
    out.set_item("table", stats::report_table1(&report, "data").map_err(py_err)?)?;
    Ok(out)
}

/// Runs one pipeline stage (`"scatter"`, `"fit-pca"`, …) and returns the
/// written paths. `settings` override the config file, key by key.
#[pyfunction]
#[pyo3(signature = (stage, config = None, settings = None))]
fn run_stage(stage: &str, config: Option<PathBuf>, settings: Option<Vec<(String, String)>>) -> PyResult<Vec<PathBuf>> {
    let stage: Stage = stage.parse().map_err(py_err)?;
    let mut cfg = match config {
        Some(path) => PipelineConfig::from_file(&path).map_err(py_err)?,
        None => PipelineConfig::default(),
    };
    for (key, value) in settings.unwrap_or_default() {
        cfg.set(&key, &value).map_err(py_err)?;
    }
    pl::run_stage(stage, &cfg).map_err(py_err)
}

#[pymodule]
fn scatgen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(scatter, m)?)?;
    m.add_function(wrap_pyfunction!(path_count, m)?)?;
    m.add_function(wrap_pyfunction!(read_idx_images, m)?)?;
    m.add_function(wrap_pyfunction!(jarque_bera, m)?)?;
    m.add_function(wrap_pyfunction!(dagostino_k2, m)?)?;
    m.add_function(wrap_pyfunction!(normality_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add_class::<PyPcaModel>()?;
    m.add_class::<PyDecoder>()?;
    m.add_class::<PyVaeModel>()?;
    m.add_class::<PyGanModel>()?;
    m.add("STAGES", Stage::ALL.iter().map(|s| s.name()).collect::<Vec<_>>())?;
    Ok(())
}

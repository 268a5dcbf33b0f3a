//! The stage DAG. Every stage reads the artifacts of its upstream stages
//! from the output directory and writes its own atomically, so a stage can
//! be re-run on its own and yields the same bytes for the same config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{fnv1a64, write_atomic, ModelCheckpoint, ModelKind};
use super::config::{PipelineConfig, SampleSource};
use super::grid::{export_grid, ImageGrid};
use super::mnist::ingest_mnist;
use super::models::*;
use super::sampling::{sample_images, visualization_matrix, LatentSampler};
use crate::error::{Error, Result};
use crate::latent::{fit_pca, whiten, WhitenedCoeffs};
use crate::nn::{
    Decoder, DecoderConfig, DecoderTrainer, EpochMetrics, GanConfig, GanModel, GanTrainer, TrainConfig, VaeConfig,
    VaeModel, VaeTrainer,
};
use crate::scattering::{scatter, FilterBank, ScatteringConfig};
use crate::stats::{report_table1, test_all_components, NormalityReport};
use crate::tensor::{AdamConfig, BatchNormMode, Tensor};

/// Images scattered per batch.
const SCATTER_CHUNK: usize = 500;
/// Training reconstructions written next to the decoder checkpoint.
const RECON_TILES: usize = 16;
/// Row label of the normality table.
pub const DATASET_LABEL: &str = "MNIST";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Scatter,
    FitPca,
    Whiten,
    TrainDecoder,
    TrainVae,
    TrainGan,
    Sample,
    VizMatrix,
    TestNormality,
    Report,
}

impl Stage {
    /// Topological order.
    pub const ALL: [Stage; 10] = [
        Stage::Scatter,
        Stage::FitPca,
        Stage::Whiten,
        Stage::TrainDecoder,
        Stage::TrainVae,
        Stage::TrainGan,
        Stage::Sample,
        Stage::VizMatrix,
        Stage::TestNormality,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Scatter => "scatter",
            Stage::FitPca => "fit-pca",
            Stage::Whiten => "whiten",
            Stage::TrainDecoder => "train-decoder",
            Stage::TrainVae => "train-vae",
            Stage::TrainGan => "train-gan",
            Stage::Sample => "sample",
            Stage::VizMatrix => "vizmatrix",
            Stage::TestNormality => "test-normality",
            Stage::Report => "report",
        }
    }

    /// File name of the artifact downstream stages look for.
    pub fn artifact(self, config: &PipelineConfig) -> String {
        match self {
            Stage::Scatter => "scatter.sgnc".into(),
            Stage::FitPca => "pca.sgnc".into(),
            Stage::Whiten => "whitened.sgnc".into(),
            Stage::TrainDecoder => "decoder.sgnc".into(),
            Stage::TrainVae => "vae.sgnc".into(),
            Stage::TrainGan => "gan.sgnc".into(),
            Stage::Sample => format!("samples-{}.pgm", config.sample_source.name()),
            Stage::VizMatrix => "vizmatrix.pgm".into(),
            Stage::TestNormality => "normality.tsv".into(),
            Stage::Report => "table1.txt".into(),
        }
    }

    /// Direct upstream stages. `sample` also needs the generative model
    /// selected by `sample_source`.
    pub fn dependencies(self, config: &PipelineConfig) -> Vec<Stage> {
        match self {
            Stage::Scatter => vec![],
            Stage::FitPca => vec![Stage::Scatter],
            Stage::Whiten => vec![Stage::Scatter, Stage::FitPca],
            Stage::TrainDecoder | Stage::TrainVae | Stage::TrainGan | Stage::TestNormality => vec![Stage::Whiten],
            Stage::Sample => match config.sample_source {
                SampleSource::Gaussian => vec![Stage::TrainDecoder],
                SampleSource::Vae => vec![Stage::TrainDecoder, Stage::TrainVae],
                SampleSource::Gan => vec![Stage::TrainDecoder, Stage::TrainGan],
            },
            Stage::VizMatrix => vec![Stage::TrainDecoder],
            Stage::Report => vec![Stage::TestNormality],
        }
    }

    /// All upstream stages, in topological order.
    pub fn upstream(self, config: &PipelineConfig) -> Vec<Stage> {
        let mut needed = vec![false; Stage::ALL.len()];
        let mut stack = self.dependencies(config);
        while let Some(s) = stack.pop() {
            if !needed[s as usize] {
                needed[s as usize] = true;
                stack.extend(s.dependencies(config));
            }
        }
        Stage::ALL.into_iter().filter(|s| needed[*s as usize]).collect()
    }

    fn reads_dataset(self) -> bool {
        matches!(self, Stage::Scatter | Stage::TrainDecoder)
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| Error::param(format!("unknown stage {s:?}")))
    }
}

/// Seed for one named consumer of randomness, derived from the base seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(fnv1a64(tag.as_bytes()));
    rng.next_u64()
}

/// Checks that every upstream artifact exists, naming the earliest missing
/// stage.
pub fn check_dependencies(stage: Stage, config: &PipelineConfig) -> Result<()> {
    for up in stage.upstream(config) {
        let artifact = config.out.join(up.artifact(config));
        if !artifact.is_file() {
            return Err(Error::Dependency { stage: up.name(), artifact });
        }
    }
    if stage.reads_dataset() && !config.dataset.is_file() {
        return Err(Error::io(
            &config.dataset,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file does not exist"),
        ));
    }
    Ok(())
}

/// Runs one stage and returns the paths it wrote.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    check_dependencies(stage, config)?;
    let ctx = Context { config, out: &config.out };
    match stage {
        Stage::Scatter => ctx.scatter(),
        Stage::FitPca => ctx.fit_pca(),
        Stage::Whiten => ctx.whiten(),
        Stage::TrainDecoder => ctx.train_decoder(),
        Stage::TrainVae => ctx.train_vae(),
        Stage::TrainGan => ctx.train_gan(),
        Stage::Sample => ctx.sample(),
        Stage::VizMatrix => ctx.vizmatrix(),
        Stage::TestNormality => ctx.test_normality(),
        Stage::Report => ctx.report(),
    }
}

struct Context<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
}

impl Context<'_> {
    fn path(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.artifact(self.config))
    }

    fn images(&self) -> Result<Tensor<f32>> {
        let all = ingest_mnist(&self.config.dataset)?;
        let n = all.shape()[0];
        if n < self.config.n_images {
            return Err(Error::param(format!("dataset holds {n} images, n_images is {}", self.config.n_images)));
        }
        all.slice_rows(0, self.config.n_images)
    }

    fn whitened(&self) -> Result<Tensor<f64>> {
        let ck = ModelCheckpoint::load_kind(&self.path(Stage::Whiten), ModelKind::Whitened)?;
        Ok(ck.get_f64("whitened")?.clone())
    }

    fn decoder(&self) -> Result<Decoder<f32>> {
        decoder_from_checkpoint(&ModelCheckpoint::load_kind(&self.path(Stage::TrainDecoder), ModelKind::Decoder)?)
    }

    fn scatter(&self) -> Result<Vec<PathBuf>> {
        let images = self.images()?;
        let [n, c, h, w] = images.shape()[..] else { unreachable!("ingest yields rank-4 tensors") };
        let config = ScatteringConfig {
            j: self.config.scattering_j,
            l: self.config.scattering_l,
            height: h,
            width: w,
            channels: c,
        };
        let bank = FilterBank::build(&config)?;
        let d = config.flat_dim();
        let mut flat = Vec::with_capacity(n * d);
        for start in (0..n).step_by(SCATTER_CHUNK) {
            let chunk = images.slice_rows(start, (start + SCATTER_CHUNK).min(n))?.cast::<f64>();
            let coeffs = scatter(&chunk, &bank, &config)?.into_flat();
            flat.extend(coeffs.data().iter().map(|&v| v as f32));
        }
        let mut ck = ModelCheckpoint::new(ModelKind::Features);
        ck.push("meta.config", Tensor::new(&[2], vec![config.j as f64, config.l as f64])?);
        ck.push("coefficients", Tensor::new(&[n, d], flat)?);
        let path = self.path(Stage::Scatter);
        ck.save(&path)?;
        Ok(vec![path])
    }

    fn coefficients(&self) -> Result<Tensor<f64>> {
        let ck = ModelCheckpoint::load_kind(&self.path(Stage::Scatter), ModelKind::Features)?;
        Ok(ck.get_f32("coefficients")?.cast())
    }

    fn fit_pca(&self) -> Result<Vec<PathBuf>> {
        let pca = fit_pca(&self.coefficients()?, self.config.n_components)?;
        let path = self.path(Stage::FitPca);
        pca_to_checkpoint(&pca)?.save(&path)?;
        Ok(vec![path])
    }

    fn whiten(&self) -> Result<Vec<PathBuf>> {
        let pca = pca_from_checkpoint(&ModelCheckpoint::load_kind(&self.path(Stage::FitPca), ModelKind::Pca)?)?;
        let w = whiten(&pca, &self.coefficients()?)?;
        let mut ck = ModelCheckpoint::new(ModelKind::Whitened);
        ck.push("whitened", w.values);
        let path = self.path(Stage::Whiten);
        ck.save(&path)?;
        Ok(vec![path])
    }

    fn train_config(&self, lr: f64, beta1: f64) -> TrainConfig {
        TrainConfig { batch_size: self.config.batch_size, adam: AdamConfig { lr, beta1, ..AdamConfig::default() } }
    }

    fn metrics_path(&self, stage: Stage) -> PathBuf {
        self.out.join(format!("{}.metrics.tsv", stage.name().trim_start_matches("train-")))
    }

    fn train_decoder(&self) -> Result<Vec<PathBuf>> {
        let m = self.config.decoder_images;
        let coeffs = self.whitened()?.slice_rows(0, m)?.cast::<f32>();
        let images = self.images()?.slice_rows(0, m)?;
        let [_, channels, side, width] = images.shape()[..] else { unreachable!("ingest yields rank-4 tensors") };
        let mut config = DecoderConfig::mnist();
        let upsampling = 1 << (config.channel_schedule.len() - 1);
        if side != width || side % upsampling != 0 {
            return Err(Error::param(format!("decoder needs square images with side divisible by {upsampling}")));
        }
        config.n_components = coeffs.shape()[1];
        config.base_spatial = side / upsampling;
        config.out_channels = channels;

        let tag = Stage::TrainDecoder.name();
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("{tag}/init")));
        let model = Decoder::new(config, &mut init)?;
        let mut trainer = DecoderTrainer::new(model, self.train_config(self.config.decoder_lr, AdamConfig::default().beta1));
        let initial = trainer.evaluate(&coeffs, &images, BatchNormMode::Train)?;
        let mut log = MetricsLog::new(&["l1"]);
        log.push_values(0, &[initial]);
        let mut epochs = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("{tag}/epochs")));
        for epoch in 1..=self.config.decoder_epochs {
            log.push(epoch, &trainer.train_epoch(&coeffs, &images, epochs.next_u64())?)?;
        }

        let path = self.path(Stage::TrainDecoder);
        decoder_to_checkpoint(&trainer.model).save(&path)?;
        let metrics = self.metrics_path(Stage::TrainDecoder);
        write_atomic(&metrics, log.text.as_bytes())?;
        let tiles = RECON_TILES.min(m);
        let recon = trainer.model.decode(&coeffs.slice_rows(0, tiles)?, tiles)?;
        let (rows, cols) = ImageGrid::layout(tiles);
        let grid_path = self.out.join("decoder-recon.pgm");
        export_grid(&ImageGrid::from_batch(&recon, rows, cols)?, &grid_path)?;
        Ok(vec![path, metrics, grid_path])
    }

    fn train_vae(&self) -> Result<Vec<PathBuf>> {
        let data = self.whitened()?.cast::<f32>();
        let config = VaeConfig { input: data.shape()[1], latent: self.config.latent, beta: self.config.vae_beta };
        let tag = Stage::TrainVae.name();
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("{tag}/init")));
        let model = VaeModel::new(config, &mut init)?;
        let mut trainer = VaeTrainer::new(model, self.train_config(self.config.vae_lr, AdamConfig::default().beta1));
        let mut log = MetricsLog::new(&["loss", "recon", "kl"]);
        let mut epochs = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("{tag}/epochs")));
        for epoch in 1..=self.config.vae_epochs {
            log.push(epoch, &trainer.train_epoch(&data, epochs.next_u64())?)?;
        }
        let path = self.path(Stage::TrainVae);
        vae_to_checkpoint(&trainer.model).save(&path)?;
        let metrics = self.metrics_path(Stage::TrainVae);
        write_atomic(&metrics, log.text.as_bytes())?;
        Ok(vec![path, metrics])
    }

    fn train_gan(&self) -> Result<Vec<PathBuf>> {
        let data = self.whitened()?.cast::<f32>();
        let config = GanConfig { data: data.shape()[1], noise: self.config.latent, output: self.config.generator_output() };
        let tag = Stage::TrainGan.name();
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("{tag}/init")));
        let model = GanModel::new(config, &mut init)?;
        let mut trainer = GanTrainer::new(model, self.train_config(self.config.gan_lr, self.config.gan_beta1));
        let mut log = MetricsLog::new(&["d_loss", "g_loss", "d_real", "d_fake"]);
        let mut epochs = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &format!("{tag}/epochs")));
        for epoch in 1..=self.config.gan_epochs {
            log.push(epoch, &trainer.train_epoch(&data, epochs.next_u64())?)?;
        }
        let path = self.path(Stage::TrainGan);
        gan_to_checkpoint(&trainer.model).save(&path)?;
        let metrics = self.metrics_path(Stage::TrainGan);
        write_atomic(&metrics, log.text.as_bytes())?;
        Ok(vec![path, metrics])
    }

    fn sample(&self) -> Result<Vec<PathBuf>> {
        let decoder = self.decoder()?;
        let source = self.config.sample_source;
        let seed = derive_seed(self.config.seed, &format!("sample/{}", source.name()));
        let count = self.config.sample_count;
        let grid = match source {
            SampleSource::Gaussian => {
                let sampler = LatentSampler::Gaussian { n_components: decoder.config.n_components };
                sample_images(sampler, count, seed, &decoder)?
            }
            SampleSource::Vae => {
                let ck = ModelCheckpoint::load_kind(&self.path(Stage::TrainVae), ModelKind::Vae)?;
                sample_images(LatentSampler::Vae(&vae_from_checkpoint(&ck)?), count, seed, &decoder)?
            }
            SampleSource::Gan => {
                let ck = ModelCheckpoint::load_kind(&self.path(Stage::TrainGan), ModelKind::Gan)?;
                sample_images(LatentSampler::Gan(&gan_from_checkpoint(&ck)?), count, seed, &decoder)?
            }
        };
        let path = self.path(Stage::Sample);
        export_grid(&grid, &path)?;
        Ok(vec![path])
    }

    fn vizmatrix(&self) -> Result<Vec<PathBuf>> {
        let decoder = self.decoder()?;
        let grid = visualization_matrix(self.config.viz_c1, self.config.viz_c2, &self.config.viz_values, &decoder)?;
        let path = self.path(Stage::VizMatrix);
        export_grid(&grid, &path)?;
        Ok(vec![path])
    }

    fn test_normality(&self) -> Result<Vec<PathBuf>> {
        let mut w = self.whitened()?;
        let n = w.shape()[0];
        if self.config.test_samples > 0 && self.config.test_samples < n {
            w = w.slice_rows(0, self.config.test_samples)?;
        }
        let report = test_all_components(&WhitenedCoeffs::new(w)?, &self.config.alpha_levels)?;
        let path = self.path(Stage::TestNormality);
        write_atomic(&path, report.to_tsv().as_bytes())?;
        Ok(vec![path])
    }

    fn report(&self) -> Result<Vec<PathBuf>> {
        let source = self.path(Stage::TestNormality);
        let text = std::fs::read_to_string(&source).map_err(|e| Error::io(&source, e))?;
        let table = report_table1(&NormalityReport::from_tsv(&text)?, DATASET_LABEL)?;
        let path = self.path(Stage::Report);
        write_atomic(&path, table.as_bytes())?;
        Ok(vec![path])
    }
}

/// Tab-separated per-epoch metrics.
struct MetricsLog {
    names: Vec<&'static str>,
    text: String,
}

impl MetricsLog {
    fn new(names: &[&'static str]) -> Self {
        let mut text = String::from("epoch");
        for n in names {
            write!(text, "\t{n}").unwrap();
        }
        text.push('\n');
        Self { names: names.to_vec(), text }
    }

    fn push_values(&mut self, epoch: usize, values: &[f64]) {
        write!(self.text, "{epoch}").unwrap();
        for v in values {
            write!(self.text, "\t{v}").unwrap();
        }
        self.text.push('\n');
    }

    fn push(&mut self, epoch: usize, metrics: &EpochMetrics) -> Result<()> {
        let values = self
            .names
            .iter()
            .map(|n| metrics.get(n).ok_or_else(|| Error::Contract(format!("epoch metrics lack {n}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!("non-finite training metric at epoch {epoch}: {values:?}")));
        }
        self.push_values(epoch, &values);
        Ok(())
    }
}

/// Parses a metrics file written by a training stage into `(epoch, values)`.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<f64>)>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> =
        lines.next().ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?.split('\t').skip(1).map(String::from).collect();
    let bad = || Error::Format(format!("malformed metrics row in {}", path.display()));
    let rows = lines
        .map(|line| {
            let mut f = line.split('\t');
            let epoch = f.next().and_then(|e| e.parse().ok()).ok_or_else(bad)?;
            let values = f.map(|v| v.parse().map_err(|_| bad())).collect::<Result<Vec<f64>>>()?;
            Ok((epoch, values))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

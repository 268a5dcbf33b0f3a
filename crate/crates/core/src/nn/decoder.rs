use rand::Rng;

use super::{expect_width, uniform_init, BatchNorm, Linear, ParamSet, StatSet};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormMode, Float, Tape, Tensor, Unary, Var};

/// Shape of the convolutional decoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    pub n_components: usize,
    pub base_spatial: usize,
    /// Channel widths: the first is the reshaped FC output, each later entry
    /// follows one ×2 upsampling block. Halves at every step and ends at 32.
    pub channel_schedule: Vec<usize>,
    pub kernel_size: usize,
    pub out_channels: usize,
}

impl DecoderConfig {
    pub const LAST_HIDDEN: usize = 32;

    /// 512 components → 128×7×7 → 64×14×14 → 32×28×28 → 1×28×28.
    pub fn mnist() -> Self {
        Self { n_components: 512, base_spatial: 7, channel_schedule: vec![128, 64, 32], kernel_size: 3, out_channels: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size != 3 {
            return Err(Error::param(format!("decoder kernel size must be 3, got {}", self.kernel_size)));
        }
        if self.n_components == 0 || self.base_spatial == 0 {
            return Err(Error::param("decoder input width and base spatial size must be positive"));
        }
        if !matches!(self.out_channels, 1 | 3) {
            return Err(Error::param(format!("decoder output must have 1 or 3 channels, got {}", self.out_channels)));
        }
        let s = &self.channel_schedule;
        if s.last() != Some(&Self::LAST_HIDDEN) {
            return Err(Error::param(format!("channel schedule {s:?} must end at {}", Self::LAST_HIDDEN)));
        }
        if s.windows(2).any(|p| p[0] != 2 * p[1]) {
            return Err(Error::param(format!("channel schedule {s:?} must halve at every step")));
        }
        Ok(())
    }

    pub fn output_side(&self) -> usize {
        self.base_spatial << (self.channel_schedule.len() - 1)
    }

    pub fn output_shape(&self, batch: usize) -> [usize; 4] {
        let side = self.output_side();
        [batch, self.out_channels, side, side]
    }
}

#[derive(Clone, Debug, PartialEq)]
struct UpBlock {
    kernel: usize,
    norm: BatchNorm,
}

/// Whitened coefficients → images in (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub config: DecoderConfig,
    pub params: ParamSet<T>,
    pub stats: StatSet<T>,
    fc: Linear,
    blocks: Vec<UpBlock>,
    head_kernel: usize,
    head_bias: usize,
}

impl<T: Float> Decoder<T> {
    pub fn new(config: DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        let mut stats = StatSet::default();
        let s = &config.channel_schedule;
        let fc = Linear::new(&mut params, "fc", config.n_components, s[0] * config.base_spatial.pow(2), rng);
        let k = config.kernel_size;
        let mut blocks = Vec::new();
        for (i, pair) in s.windows(2).enumerate() {
            let (cin, cout) = (pair[0], pair[1]);
            let name = format!("up{}", i + 1);
            let kernel = params.add(format!("{name}.conv.weight"), uniform_init(&[cout, cin, k, k], cin * k * k, rng));
            let norm = BatchNorm::new(&mut params, &mut stats, &format!("{name}.bn"), cout);
            blocks.push(UpBlock { kernel, norm });
        }
        let last = Self::last_hidden(&config);
        let fan_in = last * k * k;
        let head_kernel = params.add("head.conv.weight", uniform_init(&[config.out_channels, last, k, k], fan_in, rng));
        let head_bias = params.add("head.conv.bias", uniform_init(&[config.out_channels], fan_in, rng));
        Ok(Self { config, params, stats, fc, blocks, head_kernel, head_bias })
    }

    fn last_hidden(config: &DecoderConfig) -> usize {
        *config.channel_schedule.last().expect("validated schedule is nonempty")
    }

    /// Records the forward pass for a `B×n_components` input. Training mode
    /// updates the batch-norm running statistics.
    pub fn forward(&mut self, tape: &mut Tape<T>, vars: &[Var], w: Var, mode: BatchNormMode) -> Result<Var> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.layers(tape, vars, w, &mut stats, mode);
        self.stats = stats;
        out
    }

    fn layers(&self, tape: &mut Tape<T>, vars: &[Var], w: Var, stats: &mut StatSet<T>, mode: BatchNormMode) -> Result<Var> {
        let cfg = &self.config;
        let batch = expect_width(tape.shape(w), cfg.n_components, "decoder")?;
        let h = self.fc.forward(tape, vars, w)?;
        let h = tape.relu(h)?;
        let side = cfg.base_spatial;
        let mut h = tape.reshape(h, &[batch, cfg.channel_schedule[0], side, side])?;
        let pad = cfg.kernel_size / 2;
        for block in &self.blocks {
            h = tape.upsample_nearest(h, 2)?;
            h = tape.conv2d(h, vars[block.kernel], None, 1, pad)?;
            h = block.norm.forward(tape, vars, h, stats, mode)?;
            h = tape.relu(h)?;
        }
        let h = tape.conv2d(h, vars[self.head_kernel], Some(vars[self.head_bias]), 1, pad)?;
        tape.sigmoid(h)
    }

    /// Eval-mode decoding of a `B×n_components` batch, processed in chunks.
    pub fn decode(&self, w: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        let batch = expect_width(w.shape(), self.config.n_components, "decoder")?;
        let shape = self.config.output_shape(batch);
        let mut out = Vec::with_capacity(shape.iter().product());
        let mut stats = self.stats.clone();
        for start in (0..batch).step_by(chunk.max(1)) {
            let rows = w.slice_rows(start, (start + chunk.max(1)).min(batch))?;
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape, false);
            let x = tape.constant(rows);
            let y = self.layers(&mut tape, &vars, x, &mut stats, BatchNormMode::Eval)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Tensor::new(&shape, out)
    }
}

/// Mean absolute error over every pixel.
pub fn decoder_loss<T: Float>(tape: &mut Tape<T>, predicted: Var, target: Var) -> Result<Var> {
    if tape.shape(predicted) != tape.shape(target) {
        return Err(Error::dim(format!(
            "decoder loss compares {:?} with {:?}",
            tape.shape(predicted),
            tape.shape(target)
        )));
    }
    let diff = tape.sub(predicted, target)?;
    let abs = tape.unary(Unary::Abs, diff)?;
    tape.mean_all(abs)
}

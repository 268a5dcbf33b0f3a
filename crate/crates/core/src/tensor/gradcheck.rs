//! Central finite-difference checks of tape gradients in 64-bit.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Larger of the two finite-difference steps.
    pub step: f64,
    /// Entries checked per tensor; smaller tensors are checked in full.
    pub per_tensor: usize,
    /// Magnitude below which both gradients count as zero. Keeps pure
    /// round-off on dead units from reading as a 100% relative error.
    pub zero_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-4, per_tensor: 24, zero_floor: 1e-8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(tensor, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares the reverse-mode gradient of `loss(tape, params)` with central
/// differences at sampled entries of every tensor in `params`. Relative
/// error is `|a − n| / max(|a|, |n|)`.
///
/// The numeric derivative is the Richardson extrapolation
/// `(4·D(h/2) − D(h)) / 3` of central differences `D`, which is accurate to
/// O(h⁴). That permits a step large enough that round-off in the loss does
/// not swamp small gradients.
pub fn check_gradients<F>(params: &[Tensor<f64>], options: GradCheckOptions, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut work = params.to_vec();
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for t in 0..params.len() {
        let numel = params[t].numel();
        let picks: Vec<usize> = if numel <= options.per_tensor {
            (0..numel).collect()
        } else {
            index::sample(&mut rng, numel, options.per_tensor).into_vec()
        };
        for i in picks {
            let x = params[t].data()[i];
            let mut central = |h: f64| -> Result<f64> {
                work[t].data_mut()[i] = x + h;
                let up = eval(&work)?;
                work[t].data_mut()[i] = x - h;
                let down = eval(&work)?;
                work[t].data_mut()[i] = x;
                Ok((up - down) / (2.0 * h))
            };
            let coarse = central(options.step)?;
            let fine = central(options.step / 2.0)?;
            let numeric = (4.0 * fine - coarse) / 3.0;
            let a = analytic[t].data()[i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < options.zero_floor { 0.0 } else { (a - numeric).abs() / scale };
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (t, i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

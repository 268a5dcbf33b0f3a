use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Unnormalized 2D FFT over a row-major `height × width` buffer. The inverse
/// divides by `height·width`.
pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    rows_fwd: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_fwd: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
    column: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            rows_fwd: planner.plan_fft_forward(width),
            rows_inv: planner.plan_fft_inverse(width),
            cols_fwd: planner.plan_fft_forward(height),
            cols_inv: planner.plan_fft_inverse(height),
            column: vec![Complex64::new(0.0, 0.0); height],
        }
    }

    pub fn forward(&mut self, buf: &mut [Complex64]) {
        let (rows, cols) = (self.rows_fwd.clone(), self.cols_fwd.clone());
        self.run(buf, &*rows, &*cols);
    }

    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        let (rows, cols) = (self.rows_inv.clone(), self.cols_inv.clone());
        self.run(buf, &*rows, &*cols);
        let scale = 1.0 / (self.height * self.width) as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
    }

    fn run(&mut self, buf: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        assert_eq!(buf.len(), self.height * self.width);
        rows.process(buf);
        for c in 0..self.width {
            for r in 0..self.height {
                self.column[r] = buf[r * self.width + c];
            }
            cols.process(&mut self.column);
            for r in 0..self.height {
                buf[r * self.width + c] = self.column[r];
            }
        }
    }
}

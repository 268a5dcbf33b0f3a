use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step and must keep matching the parameter shapes afterwards.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim(format!(
                    "parameter {i} has shape {:?} but its gradient has shape {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel()) {
            return Err(Error::dim("optimizer state does not match the parameter list"));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (lr, eps, c1, c2) = (T::of(lr), T::of(eps), T::of(c1), T::of(c2));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        let mut p = vec![Tensor::new(&[2], vec![1.0, -2.0]).unwrap()];
        adam.step(&mut p, &[Tensor::new(&[2], vec![0.5, 0.5]).unwrap()]).unwrap();
        let before = p[0].clone();
        let m_before = adam.first_moments()[0][0];
        adam.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(adam.first_moments()[0][0], 0.9 * m_before);
        // a zero gradient still moves along the decaying first moment
        assert!(p[0].data()[0] < before.data()[0]);

        let mut fresh = Adam::<f64>::new(AdamConfig::default());
        let mut q = vec![Tensor::new(&[2], vec![1.0, -2.0]).unwrap()];
        fresh.step(&mut q, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(q[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the first update is lr·g/(|g|+eps).
        let cfg = AdamConfig::default();
        let mut adam = Adam::<f64>::new(cfg);
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![Tensor::zeros(&[3])];
        adam.step(&mut p, &[Tensor::new(&[3], g.to_vec()).unwrap()]).unwrap();
        for (w, gi) in p[0].data().iter().zip(g) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((w - expected).abs() < 1e-15);
            assert!((w.abs() - cfg.lr).abs() < 1e-7);
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut adam = Adam::<f64>::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        let mut w = vec![Tensor::scalar(1.0)];
        let mut reached = None;
        for step in 1..=200 {
            let g = 2.0 * w[0].item().unwrap();
            adam.step(&mut w, &[Tensor::scalar(g)]).unwrap();
            if w[0].item().unwrap().abs() < 0.01 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "w = {}", w[0].item().unwrap());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut adam = Adam::<f64>::new(AdamConfig::default());
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(matches!(adam.step(&mut p, &[Tensor::zeros(&[3])]), Err(Error::Dimension(_))));
    }
}

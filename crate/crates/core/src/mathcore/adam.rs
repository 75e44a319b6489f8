//! Adaptive-moment optimizer over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators and step count for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    /// One bias-corrected update. Nothing is modified if any gradient entry
    /// is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let mut opt = Adam::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn single_step_on_quadratic() {
        // loss (x-3)^2 at x=0: g = -6, m = -0.6, v = 0.036.
        // Bias-corrected m_hat = -6, v_hat = 36, so x1 = 1e-3 * 6 / (6 + 1e-8).
        let mut opt = Adam::new(AdamConfig::default(), 1);
        let mut x = vec![0.0];
        let g = 2.0 * (x[0] - 3.0);
        opt.step(&mut x, &[g]).unwrap();
        let expected = 1e-3 * 6.0 / (6.0 + 1e-8);
        assert!((x[0] - expected).abs() < 1e-15, "{} vs {expected}", x[0]);
    }

    #[test]
    fn quadratic_loss_decreases_for_100_steps() {
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            1,
        );
        let mut x = vec![0.0];
        let mut prev = (x[0] - 3.0_f64).powi(2);
        for step in 0..100 {
            let g = 2.0 * (x[0] - 3.0);
            opt.step(&mut x, &[g]).unwrap();
            let loss = (x[0] - 3.0_f64).powi(2);
            assert!(loss < prev, "loss rose at step {step}: {prev} -> {loss}");
            prev = loss;
        }
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut opt = Adam::new(AdamConfig::default(), 3);
        let mut p = vec![0.0; 3];
        let err = opt.step(&mut p, &[0.0, f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(opt.steps(), 0);
        assert_eq!(p, vec![0.0; 3]);
    }
}

use super::demo::{DemoStore, Trajectory, Transition};
use crate::diffusion::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::mathcore::SeededRng;

/// Synthetic task with a known action distribution: `s ~ U[-1, 1]^d` and
/// `a0 | s ~ N(mu(s), sigma_d^2 I)`, so the optimal noise predictor has a
/// closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTask {
    pub state_dim: usize,
    pub action_dim: usize,
    pub sigma_d: f64,
}

impl Default for GaussianTask {
    fn default() -> Self {
        Self {
            state_dim: 2,
            action_dim: 2,
            sigma_d: 0.3,
        }
    }
}

impl GaussianTask {
    /// `mu_j(s) = 0.5 sin(1.5 s_j) + 0.25 s_{j+1}` with indices wrapping.
    pub fn mean(&self, s: &[f64]) -> Vec<f64> {
        let d = self.state_dim;
        (0..self.action_dim)
            .map(|j| 0.5 * (1.5 * s[j % d]).sin() + 0.25 * s[(j + 1) % d])
            .collect()
    }

    pub fn sample_state(&self, rng: &mut SeededRng) -> Vec<f64> {
        (0..self.state_dim).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    pub fn sample_action(&self, s: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        self.mean(s)
            .into_iter()
            .map(|m| m + self.sigma_d * rng.normal())
            .collect()
    }

    /// Minimum-MSE noise prediction: `sigma_t (a_t - mu) / (sigma_d^2 + sigma_t^2)`.
    pub fn optimal_eps(&self, s: &[f64], a_t: &[f64], t: usize, sched: &DiffusionSchedule) -> Vec<f64> {
        let sigma = sched.sigma(t);
        let denom = self.sigma_d.powi(2) + sigma * sigma;
        self.mean(s)
            .iter()
            .zip(a_t)
            .map(|(m, a)| sigma * (a - m) / denom)
            .collect()
    }

    /// `count` pseudo-trajectories of `len` independent pairs each.
    pub fn store(&self, count: usize, len: usize, rng: &mut SeededRng) -> Result<DemoStore> {
        if count == 0 || len == 0 {
            return Err(Error::config("gaussian store needs count and len >= 1"));
        }
        let mut store = DemoStore::default();
        for id in 0..count as u64 {
            let steps = (0..len)
                .map(|i| {
                    let s = self.sample_state(rng);
                    let a = self.sample_action(&s, rng);
                    Transition {
                        s,
                        a,
                        r: None,
                        terminal: i + 1 == len,
                    }
                })
                .collect();
            store.push(Trajectory {
                id,
                steps,
                noise_level: Some(0.0),
            })?;
        }
        Ok(store)
    }
}

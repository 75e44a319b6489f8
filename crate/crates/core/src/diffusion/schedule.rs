use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three numbers that define a schedule; this is what configs store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            beta_min: 0.05,
            beta_max: 0.6,
        }
    }
}

/// Variance-exploding noise schedule over actions.
///
/// Step `t` adds Gaussian noise with std `beta(t)`; the cumulative std after
/// `t` steps is `sigma(t) = sqrt(sum_{k<=t} beta(k)^2)`, with `sigma(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleConfig", into = "ScheduleConfig")]
pub struct DiffusionSchedule {
    config: ScheduleConfig,
    /// `betas[t - 1]` is the std of step `t`.
    betas: Vec<f64>,
    /// `sigmas[t]` for `t = 0..=T`.
    sigmas: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linearly spaced per-step stds from `beta_min` to `beta_max`.
    pub fn new(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("diffusion needs at least one step"));
        }
        if !(beta_min > 0.0) || !beta_min.is_finite() {
            return Err(Error::config(format!("beta_min must be positive, got {beta_min}")));
        }
        if !(beta_max >= beta_min) || !beta_max.is_finite() {
            return Err(Error::config(format!(
                "beta_max ({beta_max}) must be finite and >= beta_min ({beta_min})"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_min]
        } else {
            let delta = (beta_max - beta_min) / (steps - 1) as f64;
            (0..steps).map(|k| beta_min + k as f64 * delta).collect()
        };
        let mut sigmas = Vec::with_capacity(steps + 1);
        let mut var = 0.0;
        sigmas.push(0.0);
        for b in &betas {
            var += b * b;
            sigmas.push(var.sqrt());
        }
        Ok(Self {
            config: ScheduleConfig {
                steps,
                beta_min,
                beta_max,
            },
            betas,
            sigmas,
        })
    }

    pub fn from_config(cfg: ScheduleConfig) -> Result<Self> {
        Self::new(cfg.steps, cfg.beta_min, cfg.beta_max)
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// Per-step std, `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative std, `0 <= t <= T`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Weight on `a0` in the forward posterior mean: `beta_t^2 / sigma_t^2`.
    pub fn posterior_coef(&self, t: usize) -> f64 {
        let b = self.beta(t);
        b * b / (self.sigmas[t] * self.sigmas[t])
    }

    /// Variance of `q(a_{t-1} | a_t, a_0)`: `sigma_{t-1}^2 beta_t^2 / sigma_t^2`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        let s_prev = self.sigmas[t - 1];
        s_prev * s_prev * self.posterior_coef(t)
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::invalid(format!(
                "diffusion step {t} outside 0..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

impl TryFrom<ScheduleConfig> for DiffusionSchedule {
    type Error = Error;

    fn try_from(cfg: ScheduleConfig) -> Result<Self> {
        Self::from_config(cfg)
    }
}

impl From<DiffusionSchedule> for ScheduleConfig {
    fn from(s: DiffusionSchedule) -> Self {
        s.config
    }
}

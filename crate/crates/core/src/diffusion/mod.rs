//! Policy-wise diffusion over actions: the noise schedule, the closed-form
//! forward kernel, the noise-prediction loss, the forward-posterior mean and
//! the multi-step reverse sampler.

mod noise_model;
mod schedule;

pub use noise_model::{LossNorm, NoiseModel, NoiseModelArch};
pub use schedule::{DiffusionSchedule, ScheduleConfig};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, SeededRng};

/// Closed-form forward kernel: `a_t = a0 + sigma_t * eps`.
pub fn diffuse(a0: &[f64], t: usize, sched: &DiffusionSchedule, eps: &[f64]) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if eps.len() != a0.len() {
        return Err(Error::invalid("noise and action dims differ"));
    }
    let sigma = sched.sigma(t);
    Ok(a0.iter().zip(eps).map(|(a, e)| a + sigma * e).collect())
}

/// Mean of `q(a_{t-1} | a_t, a0)`:
/// `(sigma_{t-1}^2 a_t + beta_t^2 a0) / sigma_t^2`.
pub fn posterior_mean(a_t: &[f64], a0: &[f64], t: usize, sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::invalid("posterior mean needs t >= 1"));
    }
    sched.check_step(t)?;
    if a_t.len() != a0.len() {
        return Err(Error::invalid("a_t and a0 dims differ"));
    }
    let c0 = sched.posterior_coef(t);
    let ct = 1.0 - c0;
    Ok(a_t.iter().zip(a0).map(|(x, y)| ct * x + c0 * y).collect())
}

/// Per-example draws for one loss evaluation: the step and the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws {
    pub ts: Vec<usize>,
    pub eps: Matrix,
}

impl NoiseDraws {
    /// Uniform `t` in `1..=T` then standard normal noise, per example.
    pub fn sample(n: usize, action_dim: usize, sched: &DiffusionSchedule, rng: &mut SeededRng) -> Self {
        let ts = (0..n).map(|_| rng.inclusive(1, sched.steps())).collect();
        let mut eps = Matrix::zeros(n, action_dim);
        rng.fill_normal(eps.as_mut_slice());
        Self { ts, eps }
    }

    /// Diffused actions `a0 + sigma_t * eps`, row by row.
    pub fn diffuse(&self, actions: &Matrix, sched: &DiffusionSchedule) -> Matrix {
        let mut out = actions.clone();
        for (r, &t) in self.ts.iter().enumerate() {
            let sigma = sched.sigma(t);
            for (o, e) in out.row_mut(r).iter_mut().zip(self.eps.row(r)) {
                *o += sigma * e;
            }
        }
        out
    }
}

/// Loss value and parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Noise-prediction loss with freshly sampled steps and noise.
pub fn denoiser_loss(
    model: &NoiseModel,
    batch: &Batch,
    sched: &DiffusionSchedule,
    rng: &mut SeededRng,
) -> Result<LossAndGrad> {
    batch.require_non_empty()?;
    let draws = NoiseDraws::sample(batch.len(), model.action_dim(), sched, rng);
    let mut grad = vec![0.0; model.num_params()];
    let loss = denoiser_loss_with(model, batch, sched, &draws, 1.0, &mut grad)?;
    Ok(LossAndGrad { loss, grad })
}

/// Batch-mean of `||eps - eps_model(s, a0 + sigma_t eps, t)||` under the
/// model's norm, for given draws. The gradient of `scale * loss` is added
/// into `grad`; the unscaled loss is returned.
pub fn denoiser_loss_with(
    model: &NoiseModel,
    batch: &Batch,
    sched: &DiffusionSchedule,
    draws: &NoiseDraws,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    batch.require_non_empty()?;
    if draws.ts.len() != batch.len() || draws.eps.rows() != batch.len() {
        return Err(Error::invalid("noise draws do not match batch size"));
    }
    if model.steps() < sched.steps() {
        return Err(Error::invalid("noise model covers fewer steps than the schedule"));
    }
    let noisy = draws.diffuse(&batch.actions, sched);
    let fwd = model.forward_cached(&batch.states, &noisy, &draws.ts)?;
    let pred = fwd.output();
    let n = batch.len() as f64;
    let mut upstream = Matrix::zeros(pred.rows(), pred.cols());
    let mut total = 0.0;
    for ((u, &p), &e) in upstream
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(draws.eps.as_slice())
    {
        let r = e - p;
        match model.norm() {
            LossNorm::L1 => {
                total += r.abs();
                // d|e - p|/dp = -sign(e - p); zero at a tie.
                *u = if r > 0.0 {
                    -scale / n
                } else if r < 0.0 {
                    scale / n
                } else {
                    0.0
                };
            }
            LossNorm::L2 => {
                total += r * r;
                *u = -2.0 * r * scale / n;
            }
        }
    }
    model.backward(&fwd, &upstream, grad)?;
    Ok(total / n)
}

/// Multi-step reverse process from a caller-supplied `a_T`.
///
/// For `t = T..1`: `a0_hat = a_t - sigma_t eps(s, a_t, t)`, then
/// `a_{t-1} ~ N(posterior_mean(a_t, a0_hat, t), posterior_variance(t) I)`.
/// The last step returns the mean.
pub fn naive_reverse_sample(
    model: &NoiseModel,
    s: &[f64],
    sched: &DiffusionSchedule,
    rng: &mut SeededRng,
    a_t_init: &[f64],
) -> Result<Vec<f64>> {
    if a_t_init.len() != model.action_dim() {
        return Err(Error::invalid("initial action has the wrong dim"));
    }
    let mut a = a_t_init.to_vec();
    for t in (1..=sched.steps()).rev() {
        let eps = model.predict(s, &a, t)?;
        let sigma = sched.sigma(t);
        let a0_hat: Vec<f64> = a.iter().zip(&eps).map(|(x, e)| x - sigma * e).collect();
        let mut next = posterior_mean(&a, &a0_hat, t, sched)?;
        if t > 1 {
            let std = sched.posterior_variance(t).sqrt();
            for v in &mut next {
                *v += std * rng.normal();
            }
        }
        a = next;
    }
    Ok(a)
}

/// Reverse process started from `N(0, sigma_T^2 I)`, which is not the true
/// diffused marginal for this schedule.
pub fn naive_reverse_from_prior(
    model: &NoiseModel,
    s: &[f64],
    sched: &DiffusionSchedule,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let sigma = sched.sigma(sched.steps());
    let init: Vec<f64> = (0..model.action_dim()).map(|_| sigma * rng.normal()).collect();
    naive_reverse_sample(model, s, sched, rng, &init)
}

use std::time::Instant;

use crate::diffusion::{naive_reverse_sample, DiffusionSchedule, NoiseModel};
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, SeededRng};
use crate::policy::GeneratorPolicy;

/// How the multi-step reverse process is started.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchInit {
    /// `a_T = a + sigma_T eps` for the given action per state.
    Diffused(Matrix),
    /// `a_T ~ N(0, sigma_T^2 I)`.
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub decisions: usize,
    pub steps: usize,
    pub one_step_ms_per_1000: f64,
    pub naive_ms_per_1000: f64,
    pub ratio: f64,
    /// Norm of the mean signed difference, naive minus one-step.
    pub mean_gap: f64,
    /// Mean Euclidean distance between the two actions.
    pub mean_abs_gap: f64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "decisions,steps,one_step_ms_per_1000,naive_ms_per_1000,ratio,mean_gap,mean_abs_gap";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.3},{:.3},{:.3},{:.6},{:.6}",
            self.decisions,
            self.steps,
            self.one_step_ms_per_1000,
            self.naive_ms_per_1000,
            self.ratio,
            self.mean_gap,
            self.mean_abs_gap
        )
    }
}

/// Times one decision per state for the one-step generator and for the
/// multi-step reverse process, and compares their actions.
pub fn bench_reverse(
    model: &NoiseModel,
    policy: &GeneratorPolicy,
    states: &Matrix,
    init: &BenchInit,
    sched: &DiffusionSchedule,
    rng: &mut SeededRng,
) -> Result<BenchReport> {
    let n = states.rows();
    if n == 0 {
        return Err(Error::invalid("benchmark needs at least one state"));
    }
    let ad = policy.action_dim();
    let sigma_t = sched.sigma(sched.steps());
    if let BenchInit::Diffused(actions) = init {
        if actions.rows() != n || actions.cols() != ad {
            return Err(Error::invalid("benchmark actions must align with states"));
        }
    }
    let starts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let base = match init {
                BenchInit::Diffused(actions) => actions.row(i).to_vec(),
                BenchInit::Prior => vec![0.0; ad],
            };
            base.iter().map(|a| a + sigma_t * rng.normal()).collect()
        })
        .collect();

    // Warm caches before timing.
    for i in 0..n.min(10) {
        policy.act(states.row(i))?;
        naive_reverse_sample(model, states.row(i), sched, &mut rng.fork("warmup"), &starts[i])?;
    }

    let clock = Instant::now();
    let one_step = (0..n).map(|i| policy.act(states.row(i))).collect::<Result<Vec<_>>>()?;
    let t_one = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let naive = (0..n)
        .map(|i| naive_reverse_sample(model, states.row(i), sched, rng, &starts[i]))
        .collect::<Result<Vec<_>>>()?;
    let t_naive = clock.elapsed().as_secs_f64();

    let mut signed = vec![0.0; ad];
    let mut abs = 0.0;
    for (a, b) in naive.iter().zip(&one_step) {
        let mut d2 = 0.0;
        for j in 0..ad {
            signed[j] += (a[j] - b[j]) / n as f64;
            d2 += (a[j] - b[j]).powi(2);
        }
        abs += d2.sqrt() / n as f64;
    }
    let per_1000 = 1000.0 * 1000.0 / n as f64;
    Ok(BenchReport {
        decisions: n,
        steps: sched.steps(),
        one_step_ms_per_1000: t_one * per_1000,
        naive_ms_per_1000: t_naive * per_1000,
        ratio: t_naive / t_one,
        mean_gap: signed.iter().map(|v| v * v).sum::<f64>().sqrt(),
        mean_abs_gap: abs,
    })
}

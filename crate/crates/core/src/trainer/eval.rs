use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mathcore::SeededRng;
use crate::policy::Actor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    /// Population standard deviation over episodes.
    pub std: f64,
}

/// Undiscounted return of one episode, acting without exploration noise.
pub fn episode_return(actor: &dyn Actor, spec: &EnvSpec, rng: &mut SeededRng) -> Result<f64> {
    let mut state = spec.reset(rng);
    let mut total = 0.0;
    loop {
        let a = actor.act(&state.obs)?;
        let out = spec.step(&state, &a)?;
        total += out.reward;
        state = out.next;
        if out.done {
            return Ok(total);
        }
    }
}

/// Mean and std of undiscounted returns. Episode `i` starts from the stream
/// `base.fork("episode{i}")`, so every call with the same `base` sees the same
/// initial states.
pub fn evaluate(actor: &dyn Actor, spec: &EnvSpec, episodes: usize, base: &SeededRng) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let returns = (0..episodes)
        .map(|i| episode_return(actor, spec, &mut base.fork(&format!("episode{i}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats(&returns))
}

pub fn stats(values: &[f64]) -> EvalStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    EvalStats { mean, std: var.sqrt() }
}

/// `(R - R_zero) / (R_expert - R_zero)`: 1 for expert-level returns, 0 for
/// returns no better than doing nothing.
pub fn normalized_score(ret: f64, zero: f64, expert: f64) -> f64 {
    (ret - zero) / (expert - zero)
}

/// Fraction of the expert's performance for cost-like returns (both
/// negative): `R_expert / R`. Equals 1 at expert level and falls toward 0
/// as the agent's cost grows.
pub fn cost_ratio(ret: f64, expert: f64) -> f64 {
    expert / ret
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ExpertController, ZeroActor};

    #[test]
    fn single_episode_has_zero_std() {
        let spec = EnvSpec::pointmass2d();
        let s = evaluate(&ZeroActor { action_dim: 2 }, &spec, 1, &SeededRng::new(0)).unwrap();
        assert_eq!(s.std, 0.0);
        assert!(evaluate(&ZeroActor { action_dim: 2 }, &spec, 0, &SeededRng::new(0)).is_err());
    }

    #[test]
    fn zero_policy_is_below_expert() {
        let spec = EnvSpec::pointmass2d();
        let ctrl = ExpertController::default();
        let base = SeededRng::new(4);
        let zero = evaluate(&ZeroActor { action_dim: 2 }, &spec, 10, &base).unwrap();
        let expert = evaluate(&ctrl.actor(&spec), &spec, 10, &base).unwrap();
        assert!(zero.mean < expert.mean);
        assert_eq!(normalized_score(expert.mean, zero.mean, expert.mean), 1.0);
        assert_eq!(normalized_score(zero.mean, zero.mean, expert.mean), 0.0);
        assert_eq!(cost_ratio(expert.mean, expert.mean), 1.0);
        let r = cost_ratio(zero.mean, expert.mean);
        assert!(r > 0.0 && r < 1.0, "{r}");
    }

    #[test]
    fn episode_return_matches_manual_rollout() {
        let spec = EnvSpec {
            horizon: 5,
            ..EnvSpec::double_integrator_1d()
        };
        let ctrl = ExpertController::default();
        let got = episode_return(&ctrl.actor(&spec), &spec, &mut SeededRng::new(1)).unwrap();
        let mut rng = SeededRng::new(1);
        let mut st = spec.reset(&mut rng);
        let mut total = 0.0;
        for _ in 0..5 {
            let out = spec.step(&st, &ctrl.act(&spec, &st.obs)).unwrap();
            total += out.reward;
            st = out.next;
        }
        assert_eq!(got, total);
    }

    #[test]
    fn population_std() {
        let s = stats(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }
}

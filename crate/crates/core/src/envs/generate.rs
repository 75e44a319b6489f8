use super::demo::{DemoStore, Trajectory, Transition};
use super::spec::{EnvSpec, EnvState, ExpertController};
use crate::error::{Error, Result};
use crate::mathcore::SeededRng;
use crate::policy::Actor;

/// Rolls out `actor` for one episode from a fresh reset drawn from `rng`.
/// Gaussian noise with std `noise` is added to each action before clipping;
/// the executed (clipped) action is what gets recorded.
pub fn rollout(
    spec: &EnvSpec,
    actor: &dyn Actor,
    noise: f64,
    id: u64,
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    let start = spec.reset(rng);
    rollout_from(spec, actor, start, noise, id, rng)
}

/// Like [`rollout`] but from a given initial state; `rng` only supplies the
/// action noise.
pub fn rollout_from(
    spec: &EnvSpec,
    actor: &dyn Actor,
    start: EnvState,
    noise: f64,
    id: u64,
    rng: &mut SeededRng,
) -> Result<Trajectory> {
    let mut state = start;
    let mut steps = Vec::with_capacity(spec.horizon);
    loop {
        let mut a = actor.act(&state.obs)?;
        if a.len() != spec.action_dim() {
            return Err(Error::invalid("actor produced an action of the wrong dim"));
        }
        for v in &mut a {
            // Drawn even at zero noise so every level consumes the same stream.
            *v += noise * rng.normal();
        }
        spec.clip(&mut a);
        let out = spec.step(&state, &a)?;
        steps.push(Transition {
            s: state.obs,
            a,
            r: Some(out.reward),
            terminal: out.done,
        });
        state = out.next;
        if out.done {
            break;
        }
    }
    Ok(Trajectory {
        id,
        steps,
        noise_level: Some(noise),
    })
}

/// Initial-state stream for episode `episode`. Shared by every level, so
/// episode `k` starts from the same state at each corruption level.
pub fn start_rng(rng: &SeededRng, episode: usize) -> SeededRng {
    rng.fork(&format!("demos/start{episode}"))
}

/// Action-noise stream for `(level index, episode)`.
pub fn noise_rng(rng: &SeededRng, level: usize, episode: usize) -> SeededRng {
    rng.fork(&format!("demos/level{level}/episode{episode}"))
}

/// `per_level` noisy expert rollouts for each corruption level, ids assigned
/// in order. Levels share initial states episode by episode, so returns
/// differ across levels only through the corruption. Rewards are recorded for reporting only.
pub fn generate_demos(
    spec: &EnvSpec,
    ctrl: &ExpertController,
    levels: &[f64],
    per_level: usize,
    rng: &SeededRng,
) -> Result<DemoStore> {
    spec.validate()?;
    if let Some(bad) = levels.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::config(format!("noise level {bad} must be finite and >= 0")));
    }
    let actor = ctrl.actor(spec);
    let mut store = DemoStore::default();
    let mut id = 0;
    for (li, &level) in levels.iter().enumerate() {
        for ep in 0..per_level {
            let start = spec.reset(&mut start_rng(rng, ep));
            store.push(rollout_from(spec, &actor, start, level, id, &mut noise_rng(rng, li, ep))?)?;
            id += 1;
        }
    }
    if store.is_empty() {
        return Err(Error::config("demo generation produced an empty store"));
    }
    Ok(store)
}

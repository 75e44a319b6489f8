use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::SeededRng;
use crate::policy::{ActionBounds, Actor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    #[serde(rename = "pointmass2d")]
    PointMass2d,
    #[serde(rename = "double_integrator_1d")]
    DoubleIntegrator1d,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::PointMass2d => "pointmass2d",
            EnvName::DoubleIntegrator1d => "double_integrator_1d",
        }
    }

    pub fn position_dim(self) -> usize {
        match self {
            EnvName::PointMass2d => 2,
            EnvName::DoubleIntegrator1d => 1,
        }
    }
}

/// A damped point mass driven toward a goal. The state is `[position,
/// velocity]`; the action is an acceleration, clipped to `[-action_limit,
/// action_limit]` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: EnvName,
    pub horizon: usize,
    pub dt: f64,
    pub damping: f64,
    pub action_limit: f64,
    pub goal: Vec<f64>,
    pub spawn_low: Vec<f64>,
    pub spawn_high: Vec<f64>,
    #[serde(default = "default_action_cost")]
    pub action_cost: f64,
}

fn default_action_cost() -> f64 {
    0.01
}

/// State of an episode in progress.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub obs: Vec<f64>,
    pub elapsed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub done: bool,
}

impl EnvSpec {
    pub fn pointmass2d() -> Self {
        Self {
            name: EnvName::PointMass2d,
            horizon: 200,
            dt: 0.05,
            damping: 0.05,
            action_limit: 1.0,
            goal: vec![1.0, 1.0],
            spawn_low: vec![-2.0, -2.0],
            spawn_high: vec![-1.0, -1.0],
            action_cost: 0.01,
        }
    }

    pub fn double_integrator_1d() -> Self {
        Self {
            name: EnvName::DoubleIntegrator1d,
            horizon: 200,
            dt: 0.05,
            damping: 0.05,
            action_limit: 1.0,
            goal: vec![1.0],
            spawn_low: vec![-2.0],
            spawn_high: vec![-1.0],
            action_cost: 0.01,
        }
    }

    pub fn by_name(name: EnvName) -> Self {
        match name {
            EnvName::PointMass2d => Self::pointmass2d(),
            EnvName::DoubleIntegrator1d => Self::double_integrator_1d(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.name.position_dim();
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("dt must be positive"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::config("damping must lie in [0, 1)"));
        }
        if !(self.action_limit > 0.0) || !self.action_limit.is_finite() {
            return Err(Error::config("action_limit must be positive and finite"));
        }
        for (what, v) in [("goal", &self.goal), ("spawn_low", &self.spawn_low), ("spawn_high", &self.spawn_high)] {
            if v.len() != d {
                return Err(Error::config(format!(
                    "{what} has {} entries, {} needs {d}",
                    v.len(),
                    self.name.as_str()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config(format!("{what} must be finite")));
            }
        }
        if self.spawn_low.iter().zip(&self.spawn_high).any(|(l, h)| l > h) {
            return Err(Error::config("spawn_low must not exceed spawn_high"));
        }
        Ok(())
    }

    pub fn position_dim(&self) -> usize {
        self.name.position_dim()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.position_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.position_dim()
    }

    pub fn bounds(&self) -> ActionBounds {
        let d = self.action_dim();
        ActionBounds {
            low: vec![-self.action_limit; d],
            high: vec![self.action_limit; d],
        }
    }

    pub fn clip(&self, a: &mut [f64]) {
        for v in a {
            *v = v.clamp(-self.action_limit, self.action_limit);
        }
    }

    /// Initial state: position uniform in the spawn box, zero velocity.
    pub fn reset(&self, rng: &mut SeededRng) -> EnvState {
        let d = self.position_dim();
        let mut obs = vec![0.0; 2 * d];
        for i in 0..d {
            obs[i] = rng.uniform(self.spawn_low[i], self.spawn_high[i]);
        }
        EnvState { obs, elapsed: 0 }
    }

    /// Advances one step. The action is clipped before integration.
    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepOutcome> {
        let d = self.position_dim();
        if state.obs.len() != 2 * d || action.len() != d {
            return Err(Error::invalid(format!(
                "{} expects state dim {} and action dim {d}",
                self.name.as_str(),
                2 * d
            )));
        }
        if state.obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Environment("non-finite state".into()));
        }
        if action.iter().any(|v| !v.is_finite()) {
            return Err(Error::Environment("non-finite action".into()));
        }
        let mut a = action.to_vec();
        self.clip(&mut a);
        let (pos, vel) = state.obs.split_at(d);
        let mut obs = vec![0.0; 2 * d];
        let mut dist2 = 0.0;
        let mut effort = 0.0;
        for i in 0..d {
            obs[i] = pos[i] + self.dt * vel[i];
            obs[d + i] = (1.0 - self.damping) * vel[i] + self.dt * a[i];
            dist2 += (obs[i] - self.goal[i]).powi(2);
            effort += a[i] * a[i];
        }
        let elapsed = state.elapsed + 1;
        Ok(StepOutcome {
            next: EnvState { obs, elapsed },
            reward: -dist2 - self.action_cost * effort,
            done: elapsed >= self.horizon,
        })
    }
}

/// Proportional-derivative controller toward the goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertController {
    pub kp: f64,
    pub kd: f64,
}

impl Default for ExpertController {
    fn default() -> Self {
        Self { kp: 8.0, kd: 3.0 }
    }
}

impl ExpertController {
    /// `clip(kp (goal - pos) - kd vel)`.
    pub fn act(&self, spec: &EnvSpec, s: &[f64]) -> Vec<f64> {
        let d = spec.position_dim();
        let mut a: Vec<f64> = (0..d)
            .map(|i| self.kp * (spec.goal[i] - s[i]) - self.kd * s[d + i])
            .collect();
        spec.clip(&mut a);
        a
    }

    pub fn actor<'a>(&'a self, spec: &'a EnvSpec) -> ExpertActor<'a> {
        ExpertActor { ctrl: self, spec }
    }
}

/// An [`ExpertController`] bound to an environment.
pub struct ExpertActor<'a> {
    ctrl: &'a ExpertController,
    spec: &'a EnvSpec,
}

impl Actor for ExpertActor<'_> {
    fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.ctrl.act(self.spec, s))
    }
}

/// Always outputs zero.
pub struct ZeroActor {
    pub action_dim: usize,
}

impl Actor for ZeroActor {
    fn act(&self, _s: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.action_dim])
    }
}

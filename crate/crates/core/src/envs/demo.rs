use std::collections::HashMap;

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::mathcore::{Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    /// Environment reward. Kept for reporting only; training never reads it.
    pub r: Option<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub steps: Vec<Transition>,
    /// Corruption level used to generate this trajectory, when known.
    pub noise_level: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `sum_{n=1}^{N} gamma^n r_n`.
    pub fn discounted_return(&self, gamma: f64) -> Result<f64> {
        trajectory_return(self, gamma)
    }

    /// Plain sum of rewards.
    pub fn total_reward(&self) -> Result<f64> {
        self.steps
            .iter()
            .map(|t| t.r.ok_or_else(missing_reward))
            .sum()
    }

    pub fn states(&self) -> Matrix {
        let rows: Vec<&[f64]> = self.steps.iter().map(|t| t.s.as_slice()).collect();
        Matrix::from_rows(&rows).expect("trajectory states share a dim")
    }

    pub fn actions(&self) -> Matrix {
        let rows: Vec<&[f64]> = self.steps.iter().map(|t| t.a.as_slice()).collect();
        Matrix::from_rows(&rows).expect("trajectory actions share a dim")
    }
}

fn missing_reward() -> Error {
    Error::invalid("trajectory has no rewards (loaded without them?)")
}

/// Discounted return with the exponent starting at 1: `sum_n gamma^n r_n`.
pub fn trajectory_return(traj: &Trajectory, gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut w = 1.0;
    for t in &traj.steps {
        w *= gamma;
        total += w * t.r.ok_or_else(missing_reward)?;
    }
    Ok(total)
}

/// Demonstrations of mixed quality.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemoStore {
    trajectories: Vec<Trajectory>,
    index: HashMap<u64, usize>,
    /// `offsets[i]` is the number of transitions before trajectory `i`.
    offsets: Vec<usize>,
    transitions: usize,
}

impl DemoStore {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let mut store = Self::default();
        for t in trajectories {
            store.push(t)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        if traj.is_empty() {
            return Err(Error::invalid(format!("trajectory {} is empty", traj.id)));
        }
        if let Some(first) = self.trajectories.first().and_then(|t| t.steps.first()) {
            let step = &traj.steps[0];
            if step.s.len() != first.s.len() || step.a.len() != first.a.len() {
                return Err(Error::invalid(format!(
                    "trajectory {} dims differ from the rest of the store",
                    traj.id
                )));
            }
        }
        if self.index.contains_key(&traj.id) {
            return Err(Error::invalid(format!("duplicate trajectory id {}", traj.id)));
        }
        self.index.insert(traj.id, self.trajectories.len());
        self.offsets.push(self.transitions);
        self.transitions += traj.len();
        self.trajectories.push(traj);
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    pub fn get(&self, id: u64) -> Option<&Trajectory> {
        self.index.get(&id).map(|&i| &self.trajectories[i])
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.trajectories.first().map(|t| t.steps[0].s.len())
    }

    pub fn action_dim(&self) -> Option<usize> {
        self.trajectories.first().map(|t| t.steps[0].a.len())
    }

    pub fn max_id(&self) -> Option<u64> {
        self.trajectories.iter().map(|t| t.id).max()
    }

    /// Drops all rewards, for code paths that must not see them.
    pub fn without_rewards(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.trajectories {
            for s in &mut t.steps {
                s.r = None;
            }
        }
        out
    }

    /// Transition at a flat index.
    fn locate(&self, flat: usize) -> &Transition {
        let i = self.offsets.partition_point(|&o| o <= flat) - 1;
        &self.trajectories[i].steps[flat - self.offsets[i]]
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample_batch(&self, n: usize, rng: &mut SeededRng) -> Result<Batch> {
        if self.transitions == 0 {
            return Err(Error::invalid("cannot sample from an empty store"));
        }
        let sd = self.state_dim().unwrap();
        let ad = self.action_dim().unwrap();
        let mut states = Matrix::zeros(n, sd);
        let mut actions = Matrix::zeros(n, ad);
        for r in 0..n {
            let t = self.locate(rng.below(self.transitions));
            states.row_mut(r).copy_from_slice(&t.s);
            actions.row_mut(r).copy_from_slice(&t.a);
        }
        Batch::new(states, actions)
    }

    /// Trajectory indices ordered by undiscounted return, ascending; ties keep
    /// store order.
    pub fn order_by_return(&self) -> Result<Vec<usize>> {
        let returns = self
            .trajectories
            .iter()
            .map(Trajectory::total_reward)
            .collect::<Result<Vec<_>>>()?;
        let mut idx: Vec<usize> = (0..self.trajectories.len()).collect();
        idx.sort_by(|&a, &b| returns[a].total_cmp(&returns[b]));
        Ok(idx)
    }

    /// Splits every trajectory at terminals and every `max_len` steps.
    ///
    /// A trajectory that needs no split keeps its id; pieces of split
    /// trajectories get fresh ids above the store's current maximum.
    pub fn segmented(&self, max_len: usize) -> Result<Vec<Segment>> {
        if max_len == 0 {
            return Err(Error::config("max_demo_len must be at least 1"));
        }
        let mut next_id = self.max_id().map_or(0, |m| m + 1);
        let mut out = Vec::new();
        for traj in &self.trajectories {
            let mut pieces: Vec<(usize, usize)> = Vec::new();
            let mut start = 0;
            for (i, step) in traj.steps.iter().enumerate() {
                if step.terminal || i + 1 - start >= max_len {
                    pieces.push((start, i + 1));
                    start = i + 1;
                }
            }
            if start < traj.len() {
                pieces.push((start, traj.len()));
            }
            let single = pieces.len() == 1;
            for (start, end) in pieces {
                let id = if single {
                    traj.id
                } else {
                    next_id += 1;
                    next_id - 1
                };
                out.push(Segment {
                    parent: traj.id,
                    start,
                    trajectory: Trajectory {
                        id,
                        steps: traj.steps[start..end].to_vec(),
                        noise_level: traj.noise_level,
                    },
                });
            }
        }
        Ok(out)
    }
}

/// A contiguous piece of a stored trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub parent: u64,
    pub start: usize,
    pub trajectory: Trajectory,
}

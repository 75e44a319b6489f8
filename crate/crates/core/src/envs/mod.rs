//! Synthetic control tasks with analytic experts, noisy demonstration
//! generation and the demonstration file format.

mod demo;
mod gaussian;
mod generate;
mod io;
mod spec;

pub use demo::{trajectory_return, DemoStore, Segment, Trajectory, Transition};
pub use gaussian::GaussianTask;
pub use generate::{generate_demos, noise_rng, rollout, rollout_from, start_rng};
pub use io::{read_demos, read_demos_from, write_demos, write_demos_to, DemoHeader, DEMO_FORMAT, DEMO_VERSION};
pub use spec::{EnvName, EnvSpec, EnvState, ExpertActor, ExpertController, StepOutcome, ZeroActor};

//! Self-motivated imitation learning with policy-wise diffusion.
//!
//! Demonstrations of mixed quality are modeled as an expert policy whose
//! actions were diffused by a variance-exploding Gaussian process. A noise
//! predictor learns that process; a one-step generator is trained to land
//! where the reverse process would; and a conditioned Q-function over
//! diffusion steps estimates how many steps separate each demonstration from
//! the current policy, so that demonstrations no better than the policy can
//! be dropped as training goes on.

// Negated float comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod batch;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod expertise;
pub mod mathcore;
pub mod policy;
pub mod trainer;

pub use batch::Batch;
pub use error::{Error, Result};

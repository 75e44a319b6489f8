//! Numerical substrate: batches, seeded randomness, feed-forward networks,
//! Adam, EMA and checkpoints.

mod adam;
mod checkpoint;
mod ema;
mod matrix;
mod net;
mod rng;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, EmbeddingRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use ema::Ema;
pub use matrix::Matrix;
pub use net::{Activation, FeedForwardNet, ForwardCache, NetShape};
pub use rng::{derive_seed, RngState, SeededRng};

//! Dense networks with hand-written backpropagation, the actor-critic
//! arbitration policy, the optimizer and the checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod optim;
pub mod policy;

pub use checkpoint::{Checkpoint, RngState};
pub use mlp::{Activation, Dense, DenseGrad, Mlp, MlpCache};
pub use optim::{OptimState, StepReport};
pub use policy::{policy_input, squash, PolicyBatch, PolicyCache, PolicyGrads, PolicyNet, INPUT_DIM};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input width {found} does not match expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("cache from network version {cache} used with version {net}")]
    StaleCache { cache: u64, net: u64 },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

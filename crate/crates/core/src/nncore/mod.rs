//! Deterministic `f64` neural-network kernel: tensors, a differentiable tape,
//! layer functions, Adam, initializers and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
pub mod optim;
pub mod rng;
pub mod tensor;

use thiserror::Error;

pub use graph::{BatchStats, Graph, Mode, ParamStore, Pid, Var};
pub use layers::{avg_pool, batch_norm, conv1d, dense, dropout, gru_step, lstm_step, softmax_xent, Pool, RunningStats};
pub use optim::{adam_update, AdamState};
pub use rng::RngStream;
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! The spatiotemporal graph network: GraphSAGE + GraphNorm + stacked LSTMs.

mod checkpoint;
mod dcsage;
mod infer;
pub mod layers;

use thiserror::Error;

pub use checkpoint::{write_atomic, CheckpointMeta, ModelCheckpoint};
pub use dcsage::{DayInput, DcsageModel, ModelConfig, ModelVars, WindowBatch};
pub use layers::{GraphNormLayer, Linear, LstmCell, SageLayer};

use crate::numerics::TensorError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("window has {got} days, model expects {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("negative edge weight {weight} on {src} -> {dst}")]
    NegativeWeight { src: usize, dst: usize, weight: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

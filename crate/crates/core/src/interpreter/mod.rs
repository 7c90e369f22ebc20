//! Sequence interpreter: a stacked recurrent encoder–decoder whose encoder
//! states form the latent representation of each game sequence, plus the
//! reconstruction and spectral clustering losses defined on it.
//!
//! Batches are row-oriented: row `i` is one sequence.

mod loss;
mod model;

pub use loss::{
    gram, reconstruction_loss, reconstruction_loss_node, reconstruction_weights, trace_loss, trace_loss_node,
};
pub use model::{
    EncoderTrace, InterpreterConfig, InterpreterModel, LatentBatch, SequenceBatch, SequenceId,
};

use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum InterpreterError {
    #[error("invalid interpreter config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

//! Player classifier over clustered sequence representations.
//!
//! Three input mappings are supported: the cluster transition matrix, the
//! ordered latent rows, and the cluster frequency histogram. Mappings run
//! outside the gradient graph. Every architecture exposes a post-ReLU
//! penultimate layer of width S for the bridge.

mod mapping;
mod model;

pub use mapping::{build_adjacency, map_frequency, map_sequential, TransitionMatrix};
pub use model::{
    cce_loss, ClassifierActivations, ClassifierConfig, ClassifierModel, ClassifierNodes, Variant,
};

use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("cluster id {id} out of range for K={k}")]
    ClusterId { id: usize, k: usize },
    #[error("every sequence of the player is padding")]
    AllPadded,
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite classifier activations")]
    NonFinite,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

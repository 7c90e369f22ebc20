//! Alternating collaborative training of the interpreter and classifier,
//! the disconnected ablation, and hyperparameter sweeps.
//!
//! One collaborative epoch is an interpreter phase (classifier frozen), a
//! cluster phase (k-means over all training latents), and a classifier
//! phase (interpreter frozen). Cluster ids and penultimate activations are
//! fixed for the whole of the following interpreter phase.

mod config;
mod prepare;
mod run;
mod state;
mod sweep;
mod trainer;

pub use config::TrainingConfig;
pub use prepare::{prepare, stratified_split, PreparationRecord, PreparedData};
pub use run::{evaluate_split, load_run, run_pipeline, Evaluation, LoadedRun, RunRecord, RunResult, FINAL_DIR, RUN_RECORD};
pub use state::{FreezeCheck, LossHistory, LossRecord, Phase, RefreshEvent, TrainState};
pub use sweep::{sweep, RunHook, SweepCell, SweepGrid, SweepOptions, SweepSummary, SWEEP_RUNS_PER_CELL};
pub use trainer::{
    assign_players, classifier_config, collaborative_train, encode_players, interpreter_config, map_inputs,
    new_classifier, run_ablation, save_bundle, ClusteredPlayers, StepLosses, TrainOutput,
};

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classifier::ClassifierError;
use crate::evaluation::EvalError;
use crate::interpreter::InterpreterError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training diverged in collaborative epoch {epoch} ({phase} phase): {detail}; last good checkpoint: {}",
        last_checkpoint.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    Divergence {
        epoch: usize,
        phase: String,
        detail: String,
        last_checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Interpreter(#[from] InterpreterError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Independent random streams derived from the run seed.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Stream {
    Split = 1,
    InterpreterInit = 2,
    ClassifierInit = 3,
    BatchPartition = 4,
    BatchOrder = 5,
    KMeans = 6,
    ClassifierOrder = 7,
}

pub(crate) fn sub_seed(seed: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

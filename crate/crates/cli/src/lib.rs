//! Command implementations behind the `seqforge` binary.
//!
//! Every `cmd_*` function returns the text the binary prints, so the same
//! code paths are exercised from tests without spawning processes.

mod args;
mod commands;
mod manifest;

pub use args::{
    Cli, Command, ConfigOverrides, DataArgs, EvaluateArgs, ExportArgs, GenerateArgs, InspectArgs, SweepArgs, TrainArgs,
};
pub use commands::{
    cmd_evaluate, cmd_export_embeddings, cmd_generate, cmd_inspect, cmd_sweep, cmd_train, resolve_config, run,
    SEED_ENV,
};
pub use manifest::{read_manifest, FileDigest, RunManifest, RunStatus, MANIFEST_FILE};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input files, flags or config: exit code 2.
    Invalid(anyhow::Error),
    /// Failure while executing valid input: exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn invalid(e: impl Into<anyhow::Error>) -> Self {
        CliError::Invalid(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<seqforge_core::training::TrainError> for CliError {
    fn from(e: seqforge_core::training::TrainError) -> Self {
        use seqforge_core::training::TrainError;
        match e {
            TrainError::Config(_) | TrainError::Data(_) => CliError::invalid(e),
            other => CliError::runtime(other),
        }
    }
}

impl From<seqforge_core::data::DataError> for CliError {
    fn from(e: seqforge_core::data::DataError) -> Self {
        CliError::invalid(e)
    }
}

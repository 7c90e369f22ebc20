use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "seqforge", version, about = "Collaborative sequence clustering and player classification")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a generator spec.
    Generate(GenerateArgs),
    /// Train one pipeline (collaborative, or the disconnected ablation).
    Train(TrainArgs),
    /// Train a hyperparameter grid, five seeds per cell.
    Sweep(SweepArgs),
    /// Re-evaluate a finished run from its final checkpoint.
    Evaluate(EvaluateArgs),
    /// Print cluster profiles and per-class transition summaries of a run.
    Inspect(InspectArgs),
    /// Write latent vectors and cluster ids of a run to CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Generator spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory; receives dataset.jsonl, schema.json and spec.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Dataset location. A directory means `<dir>/dataset.jsonl`; the schema
/// defaults to `schema.json` beside the dataset file.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

/// Overrides for training config keys; each flag is named after its key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigOverrides {
    /// Number of clusters K.
    #[arg(long, alias = "K")]
    pub k: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    /// Cluster-indicator refresh period I.
    #[arg(long, visible_alias = "refresh_period", alias = "I")]
    pub refresh_period: Option<String>,
    #[arg(long, visible_alias = "collaborative_epochs")]
    pub collaborative_epochs: Option<String>,
    #[arg(long, visible_alias = "interpreter_inner_epochs")]
    pub interpreter_inner_epochs: Option<String>,
    #[arg(long, visible_alias = "classifier_inner_epochs")]
    pub classifier_inner_epochs: Option<String>,
    /// Players per batch B2.
    #[arg(long, visible_alias = "players_per_batch", alias = "B2")]
    pub players_per_batch: Option<String>,
    #[arg(long, visible_alias = "lr_interpreter")]
    pub lr_interpreter: Option<String>,
    #[arg(long, visible_alias = "lr_classifier")]
    pub lr_classifier: Option<String>,
    /// Run seed; falls back to the config file, then SEQFORGE_SEED, then 0.
    #[arg(long)]
    pub seed: Option<String>,
    /// Comma-separated encoder layer widths.
    #[arg(long, visible_alias = "hidden_sizes")]
    pub hidden_sizes: Option<String>,
    #[arg(long, visible_alias = "attention_dim")]
    pub attention_dim: Option<String>,
    #[arg(long, visible_alias = "classifier_hidden")]
    pub classifier_hidden: Option<String>,
    /// Two comma-separated convolution widths.
    #[arg(long, visible_alias = "conv_channels")]
    pub conv_channels: Option<String>,
    /// Classifier input mapping: tm, s or f.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, visible_alias = "test_fraction")]
    pub test_fraction: Option<String>,
    /// Sequences per player S, or `auto`.
    #[arg(long, visible_alias = "sequences_per_player", alias = "S")]
    pub sequences_per_player: Option<String>,
    /// Padded sequence length L, or `auto`.
    #[arg(long, visible_alias = "pad_length", alias = "L")]
    pub pad_length: Option<String>,
}

impl ConfigOverrides {
    /// Set flags as `(config key, value)` in canonical key order.
    pub fn pairs(&self) -> Vec<(&'static str, &str)> {
        let all: [(&'static str, &Option<String>); 19] = [
            ("k", &self.k),
            ("lambda", &self.lambda),
            ("beta", &self.beta),
            ("refresh_period", &self.refresh_period),
            ("collaborative_epochs", &self.collaborative_epochs),
            ("interpreter_inner_epochs", &self.interpreter_inner_epochs),
            ("classifier_inner_epochs", &self.classifier_inner_epochs),
            ("players_per_batch", &self.players_per_batch),
            ("lr_interpreter", &self.lr_interpreter),
            ("lr_classifier", &self.lr_classifier),
            ("seed", &self.seed),
            ("hidden_sizes", &self.hidden_sizes),
            ("attention_dim", &self.attention_dim),
            ("classifier_hidden", &self.classifier_hidden),
            ("conv_channels", &self.conv_channels),
            ("variant", &self.variant),
            ("test_fraction", &self.test_fraction),
            ("sequences_per_player", &self.sequences_per_player),
            ("pad_length", &self.pad_length),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    /// Train the disconnected baseline instead of the collaborative model.
    #[arg(long)]
    pub ablation: bool,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Grid file: one `key = v1, v2, ...` line per swept key.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sweep directory; rerunning into it resumes unfinished runs.
    #[arg(long)]
    pub out: PathBuf,
    /// Runs trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory for the recomputed metrics files.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory for the CSV outputs; defaults to `<run>/inspect`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Export the held-out split instead of the training split.
    #[arg(long)]
    pub test: bool,
}

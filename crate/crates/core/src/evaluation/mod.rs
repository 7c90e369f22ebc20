//! Classification metrics, transition-matrix entropy, cluster profiling
//! and recovery scoring, and latent exports.

mod clusters;
mod metrics;

pub use clusters::{
    adjacency_entropy, cluster_profiles, cluster_recovery, export_embeddings, profiles_csv, read_embeddings,
    ClusterProfile, EmbeddingRow, FeatureStats, SequenceAssignment,
};
pub use metrics::{precision_recall, MetricsReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no items to evaluate")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("class or cluster {0} out of range for {1}")]
    Class(usize, usize),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean entropy per collaborative epoch, in bits.
pub fn entropy_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,mean_entropy_bits\n");
    for (e, h) in trace.iter().enumerate() {
        out += &format!("{},{h:.12}\n", e + 1);
    }
    out
}

/// Long-format per-player entropy: one row per (epoch, player).
pub fn player_entropy_csv(player_ids: &[String], traces: &[Vec<f64>]) -> String {
    let mut out = String::from("epoch,player_id,entropy_bits\n");
    for (e, row) in traces.iter().enumerate() {
        for (id, h) in player_ids.iter().zip(row) {
            out += &format!("{},{id},{h:.12}\n", e + 1);
        }
    }
    out
}

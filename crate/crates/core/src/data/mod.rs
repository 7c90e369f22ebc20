//! Sequence-of-sequences telemetry: domain types, JSON-lines ingestion,
//! padding, normalization and a synthetic generator with planted
//! behaviour archetypes.

mod generator;
mod io;
mod normalize;
mod padding;
mod schema;

pub use generator::{generate_synthetic, ArchetypeSpec, ClassSpec, GeneratorSpec, LengthRange};
pub use io::{load_dataset, parse_dataset, write_dataset};
pub use normalize::{compute_stats, normalize, NormalizationStats};
pub use padding::{compute_pad_length, pad_dataset, pad_sample, pad_truncate};
pub use schema::{FeatureKind, FeatureSchema, FeatureSpec, DEFAULT_LABELS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("every sequence in the dataset is empty")]
    AllSequencesEmpty,
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One encoded game: numeric features as-is, booleans as 0/1 and
/// categoricals one-hot.
#[derive(Clone, Debug, PartialEq)]
pub struct GameRecord {
    pub features: Vec<f64>,
}

/// An uninterrupted run of games in play order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GameSequence {
    pub games: Vec<GameRecord>,
}

impl GameSequence {
    pub fn len(&self) -> usize {
        self.games.len()
    }

    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }
}

/// One labelled player with sequences in their original order.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerSample {
    pub player_id: String,
    /// Class index into the schema's label list.
    pub label: usize,
    pub sequences: Vec<GameSequence>,
    /// Ground-truth archetype per sequence; synthetic data only and never
    /// seen by training.
    pub archetypes: Option<Vec<usize>>,
}

/// Raw (unpadded) dataset plus the encoded feature width.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<PlayerSample>,
    pub width: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A sequence after `pad_truncate`: `L × F`, rows at or past
/// `valid_length` are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaddedSequence {
    pub values: Matrix,
    pub valid_length: usize,
}

impl PaddedSequence {
    /// A sequence with at least one game; all-zero padding sequences are not
    /// real and are excluded from transitions, histograms and clustering.
    pub fn is_real(&self) -> bool {
        self.valid_length > 0
    }
}

/// Player sample with exactly `S` padded sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedSample {
    pub player_id: String,
    pub label: usize,
    pub sequences: Vec<PaddedSequence>,
    /// Ground truth aligned with `sequences`; `None` for padding sequences.
    pub archetypes: Option<Vec<Option<usize>>>,
}

/// Dataset in model-ready form: every sample is `(S, L, F)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedDataset {
    pub samples: Vec<PaddedSample>,
    pub s: usize,
    pub l: usize,
    pub f: usize,
}

impl PaddedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Subset in the order of `indices`.
    pub fn subset(&self, indices: &[usize]) -> PaddedDataset {
        PaddedDataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            s: self.s,
            l: self.l,
            f: self.f,
        }
    }
}

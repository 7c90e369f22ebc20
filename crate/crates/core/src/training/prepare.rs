use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    compute_pad_length, compute_stats, normalize, pad_dataset, Dataset, FeatureSchema, NormalizationStats, PaddedDataset,
};

use super::{sub_seed, Stream, TrainError, TrainingConfig};

/// Padded, normalized train and test splits of one dataset.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub labels: Vec<String>,
    pub feature_names: Vec<String>,
    pub train: PaddedDataset,
    pub test: PaddedDataset,
    /// Indices into the raw dataset, aligned with `train.samples`.
    pub train_players: Vec<usize>,
    pub test_players: Vec<usize>,
    pub stats: NormalizationStats,
    pub s: usize,
    pub l: usize,
    pub f: usize,
}

/// What is needed to rebuild the same preparation from the raw dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparationRecord {
    pub labels: Vec<String>,
    pub feature_names: Vec<String>,
    pub train_players: Vec<usize>,
    pub test_players: Vec<usize>,
    pub stats: NormalizationStats,
    pub s: usize,
    pub l: usize,
    pub f: usize,
}

impl PreparedData {
    pub fn record(&self) -> PreparationRecord {
        PreparationRecord {
            labels: self.labels.clone(),
            feature_names: self.feature_names.clone(),
            train_players: self.train_players.clone(),
            test_players: self.test_players.clone(),
            stats: self.stats.clone(),
            s: self.s,
            l: self.l,
            f: self.f,
        }
    }

    /// Re-applies a saved preparation to the raw dataset.
    pub fn from_record(dataset: &Dataset, rec: &PreparationRecord) -> Result<Self, TrainError> {
        if dataset.width != rec.f {
            return Err(TrainError::Data(format!(
                "dataset width {} does not match the run's {}",
                dataset.width, rec.f
            )));
        }
        let n = dataset.samples.len();
        if let Some(&bad) = rec.train_players.iter().chain(&rec.test_players).find(|&&p| p >= n) {
            return Err(TrainError::Data(format!("player index {bad} beyond dataset of {n}")));
        }
        let pick = |idx: &[usize]| {
            let mut d = pad_dataset(&subset(dataset, idx), rec.s, rec.l);
            normalize(&mut d, &rec.stats);
            d
        };
        Ok(Self {
            labels: rec.labels.clone(),
            feature_names: rec.feature_names.clone(),
            train: pick(&rec.train_players),
            test: pick(&rec.test_players),
            train_players: rec.train_players.clone(),
            test_players: rec.test_players.clone(),
            stats: rec.stats.clone(),
            s: rec.s,
            l: rec.l,
            f: rec.f,
        })
    }
}

fn subset(dataset: &Dataset, idx: &[usize]) -> Dataset {
    Dataset {
        samples: idx.iter().map(|&i| dataset.samples[i].clone()).collect(),
        width: dataset.width,
    }
}

/// Stratified split by label: each class sends `round(test_fraction·n_c)`
/// players to the test side. Both sides keep dataset order.
pub fn stratified_split(labels: &[usize], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut test = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        test.extend_from_slice(&members[..n_test.min(members.len())]);
    }
    test.sort_unstable();
    let train = (0..labels.len()).filter(|i| test.binary_search(i).is_err()).collect();
    (train, test)
}

/// Splits, pads and normalizes. Players without a single game are dropped.
/// S defaults to the largest per-player sequence count and L to the
/// 95th-percentile sequence length.
pub fn prepare(dataset: &Dataset, schema: &FeatureSchema, config: &TrainingConfig) -> Result<PreparedData, TrainError> {
    config.validate()?;
    if schema.width() != dataset.width {
        return Err(TrainError::Data(format!(
            "schema width {} does not match dataset width {}",
            schema.width(),
            dataset.width
        )));
    }
    let usable: Vec<usize> = (0..dataset.samples.len())
        .filter(|&i| dataset.samples[i].sequences.iter().any(|q| !q.is_empty()))
        .collect();
    let dropped = dataset.samples.len() - usable.len();
    if dropped > 0 {
        log::warn!("dropping {dropped} players without any games");
    }
    if usable.is_empty() {
        return Err(TrainError::Data("dataset has no player with games".into()));
    }
    let s = config
        .sequences_per_player
        .unwrap_or_else(|| dataset.samples.iter().map(|p| p.sequences.len()).max().unwrap_or(1));
    let l = match config.pad_length {
        Some(l) => l,
        None => compute_pad_length(dataset).map_err(|e| TrainError::Data(e.to_string()))?,
    };
    let usable_labels: Vec<usize> = usable.iter().map(|&i| dataset.samples[i].label).collect();
    let (tr, te) = stratified_split(&usable_labels, config.test_fraction, sub_seed(config.seed, Stream::Split));
    let train_players: Vec<usize> = tr.iter().map(|&i| usable[i]).collect();
    let test_players: Vec<usize> = te.iter().map(|&i| usable[i]).collect();
    if train_players.is_empty() {
        return Err(TrainError::Data("training split is empty".into()));
    }
    let mut train = pad_dataset(&subset(dataset, &train_players), s, l);
    let mut test = pad_dataset(&subset(dataset, &test_players), s, l);
    let stats = compute_stats(&train, &schema.numeric_columns());
    normalize(&mut train, &stats);
    normalize(&mut test, &stats);
    Ok(PreparedData {
        labels: schema.labels.clone(),
        feature_names: schema.column_names(),
        train,
        test,
        train_players,
        test_players,
        stats,
        s,
        l,
        f: dataset.width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let (train, test) = stratified_split(&labels, 0.2, 7);
        assert_eq!(test.len(), 6);
        assert_eq!(train.len(), 24);
        for c in 0..3 {
            assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
        assert!(train.iter().all(|i| !test.contains(i)));
        assert_eq!(stratified_split(&labels, 0.2, 7), (train, test));
    }
}

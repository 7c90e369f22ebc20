use crate::numerics::Matrix;

use super::{DataError, Dataset, GameSequence, PaddedDataset, PaddedSample, PaddedSequence, PlayerSample};

/// Nearest-rank 95th percentile of the non-empty raw sequence lengths: the
/// smallest length with at least 95% of lengths at or below it.
pub fn compute_pad_length(dataset: &Dataset) -> Result<usize, DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    let mut lengths: Vec<usize> = dataset
        .samples
        .iter()
        .flat_map(|s| s.sequences.iter().map(GameSequence::len))
        .filter(|&l| l > 0)
        .collect();
    if lengths.is_empty() {
        return Err(DataError::AllSequencesEmpty);
    }
    lengths.sort_unstable();
    let rank = (95 * lengths.len()).div_ceil(100);
    Ok(lengths[rank.max(1) - 1])
}

/// Fits a raw sequence to `l` rows: longer sequences keep their most
/// recent `l` games, shorter ones are zero-padded at the tail.
pub fn pad_truncate(sequence: &GameSequence, l: usize, width: usize) -> PaddedSequence {
    assert!(l >= 1, "pad length must be positive");
    let mut values = Matrix::zeros(l, width);
    let skip = sequence.len().saturating_sub(l);
    let kept = &sequence.games[skip..];
    for (r, g) in kept.iter().enumerate() {
        values.row_mut(r).copy_from_slice(&g.features);
    }
    PaddedSequence {
        values,
        valid_length: kept.len(),
    }
}

/// Pads one player to exactly `s` sequences: the oldest are dropped when
/// there are too many, all-zero sequences are appended when too few.
pub fn pad_sample(sample: &PlayerSample, s: usize, l: usize, width: usize) -> PaddedSample {
    let skip = sample.sequences.len().saturating_sub(s);
    let mut sequences: Vec<PaddedSequence> = sample.sequences[skip..]
        .iter()
        .map(|q| pad_truncate(q, l, width))
        .collect();
    let real = sequences.len();
    sequences.extend((real..s).map(|_| PaddedSequence {
        values: Matrix::zeros(l, width),
        valid_length: 0,
    }));
    let archetypes = sample.archetypes.as_ref().map(|a| {
        a[skip..]
            .iter()
            .map(|&x| Some(x))
            .chain(std::iter::repeat_n(None, s - real))
            .collect()
    });
    PaddedSample {
        player_id: sample.player_id.clone(),
        label: sample.label,
        sequences,
        archetypes,
    }
}

pub fn pad_dataset(dataset: &Dataset, s: usize, l: usize) -> PaddedDataset {
    PaddedDataset {
        samples: dataset
            .samples
            .iter()
            .map(|p| pad_sample(p, s, l, dataset.width))
            .collect(),
        s,
        l,
        f: dataset.width,
    }
}

use serde::{Deserialize, Serialize};

use super::PaddedDataset;

/// Per-column z-score statistics over valid (non-padded) rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns actually scaled: numeric with non-zero spread.
    pub active: Vec<bool>,
}

/// Computes statistics from `train` only. `numeric[c]` marks columns that
/// are eligible; constant columns are left inactive and pass through.
pub fn compute_stats(train: &PaddedDataset, numeric: &[bool]) -> NormalizationStats {
    let f = train.f;
    let mut sum = vec![0.0; f];
    let mut sq = vec![0.0; f];
    let mut n = 0usize;
    for s in &train.samples {
        for q in &s.sequences {
            for r in 0..q.valid_length {
                for (c, &v) in q.values.row(r).iter().enumerate() {
                    sum[c] += v;
                }
                n += 1;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| if n > 0 { s / n as f64 } else { 0.0 }).collect();
    for s in &train.samples {
        for q in &s.sequences {
            for r in 0..q.valid_length {
                for (c, &v) in q.values.row(r).iter().enumerate() {
                    sq[c] += (v - mean[c]) * (v - mean[c]);
                }
            }
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| if n > 0 { (s / n as f64).sqrt() } else { 0.0 }).collect();
    let active = (0..f).map(|c| numeric[c] && std[c] > 0.0).collect();
    NormalizationStats { mean, std, active }
}

/// Z-scores active columns on valid rows; padded rows stay exactly zero.
pub fn normalize(dataset: &mut PaddedDataset, stats: &NormalizationStats) {
    for s in &mut dataset.samples {
        for q in &mut s.sequences {
            for r in 0..q.valid_length {
                for (c, v) in q.values.row_mut(r).iter_mut().enumerate() {
                    if stats.active[c] {
                        *v = (*v - stats.mean[c]) / stats.std[c];
                    }
                }
            }
        }
    }
}

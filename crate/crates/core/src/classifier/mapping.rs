use crate::numerics::Matrix;

use super::ClassifierError;

/// Cluster-to-cluster transition counts of one player and their global
/// normalization (all cells sum to 1 when any transition exists).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub normalized: Matrix,
}

impl TransitionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

fn check_ids(ids: &[Option<usize>], k: usize) -> Result<(), ClassifierError> {
    if let Some(bad) = ids.iter().flatten().find(|&&c| c >= k) {
        return Err(ClassifierError::ClusterId { id: *bad, k });
    }
    Ok(())
}

/// Counts transitions between consecutive sequences. `None` marks a padded
/// sequence; any pair touching one is skipped.
pub fn build_adjacency(ids: &[Option<usize>], k: usize) -> Result<TransitionMatrix, ClassifierError> {
    check_ids(ids, k)?;
    let mut counts = vec![vec![0u64; k]; k];
    for w in ids.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            counts[a][b] += 1;
        }
    }
    let total: u64 = counts.iter().flatten().sum();
    let mut normalized = Matrix::zeros(k, k);
    if total > 0 {
        for (i, row) in counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                normalized[(i, j)] = c as f64 / total as f64;
            }
        }
    }
    Ok(TransitionMatrix { counts, normalized })
}

/// Latent rows in original sequence order, with padded rows zeroed.
pub fn map_sequential(latents: &Matrix, real: &[bool]) -> Matrix {
    assert_eq!(latents.rows(), real.len());
    let mut out = latents.clone();
    for (r, &is_real) in real.iter().enumerate() {
        if !is_real {
            out.row_mut(r).fill(0.0);
        }
    }
    out
}

/// Normalized histogram of cluster ids over real sequences.
pub fn map_frequency(ids: &[Option<usize>], k: usize) -> Result<Vec<f64>, ClassifierError> {
    check_ids(ids, k)?;
    let mut hist = vec![0.0; k];
    let mut n = 0usize;
    for &c in ids.iter().flatten() {
        hist[c] += 1.0;
        n += 1;
    }
    if n == 0 {
        return Err(ClassifierError::AllPadded);
    }
    hist.iter_mut().for_each(|h| *h /= n as f64);
    Ok(hist)
}

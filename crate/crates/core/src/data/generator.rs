//! Synthetic players with planted behaviour archetypes.
//!
//! Each class owns a Markov chain over archetypes. A player's archetype
//! chain starts uniformly at random and then follows its class matrix; every
//! sequence draws its length and its games from the current archetype.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, FeatureSchema, GameRecord, GameSequence, PlayerSample};

const ROW_SUM_TOL: f64 = 1e-9;

/// Inclusive range of sequence lengths, sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

/// Game feature distribution of one archetype: independent Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub length: LengthRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    /// Row-stochastic `n_archetypes × n_archetypes` transition matrix.
    pub transitions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_archetypes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_names: Option<Vec<String>>,
    pub archetypes: Vec<ArchetypeSpec>,
    pub classes: Vec<ClassSpec>,
    /// Sequences per player.
    #[serde(alias = "S")]
    pub s: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn width(&self) -> usize {
        self.archetypes.first().map_or(0, |a| a.mean.len())
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_names
            .clone()
            .unwrap_or_else(|| (0..self.width()).map(|i| format!("f{i}")).collect())
    }

    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.label.clone()).collect()
    }

    /// Schema matching the generated features and class labels.
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::numeric(&self.feature_names()).with_labels(self.labels())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.n_archetypes == 0 || self.archetypes.len() != self.n_archetypes {
            return bad(format!(
                "n_archetypes is {} but {} archetypes are listed",
                self.n_archetypes,
                self.archetypes.len()
            ));
        }
        if self.classes.is_empty() {
            return bad("at least one class is required".into());
        }
        if self.s == 0 {
            return bad("S must be positive".into());
        }
        let f = self.width();
        if f == 0 {
            return bad("archetype means must be non-empty".into());
        }
        if let Some(n) = &self.feature_names {
            if n.len() != f {
                return bad(format!("{} feature names for width {f}", n.len()));
            }
        }
        for (i, a) in self.archetypes.iter().enumerate() {
            if a.mean.len() != f || a.std.len() != f {
                return bad(format!("archetype {i} mean/std must have length {f}"));
            }
            if a.std.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || a.mean.iter().any(|m| !m.is_finite()) {
                return bad(format!("archetype {i} has a non-finite mean or negative std"));
            }
            if a.length.min > a.length.max {
                return bad(format!("archetype {i} length range is empty"));
            }
        }
        for c in &self.classes {
            if c.transitions.len() != self.n_archetypes {
                return bad(format!(
                    "class '{}' transition matrix has {} rows, expected {}",
                    c.label,
                    c.transitions.len(),
                    self.n_archetypes
                ));
            }
            for (r, row) in c.transitions.iter().enumerate() {
                if row.len() != self.n_archetypes {
                    return bad(format!("class '{}' transition row {r} has {} entries", c.label, row.len()));
                }
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return bad(format!("class '{}' transition row {r} has a negative entry", c.label));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return bad(format!(
                        "class '{}' transition row {r} sums to {sum} (must be 1 within {ROW_SUM_TOL:e})",
                        c.label
                    ));
                }
            }
        }
        Ok(())
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum: take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Generates `n_per_class` players for every class, classes in spec order.
/// Ground-truth archetypes are stored on each sample.
pub fn generate_synthetic(spec: &GeneratorSpec, n_per_class: usize) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.width();
    let mut samples = Vec::with_capacity(spec.classes.len() * n_per_class);
    for (label, class) in spec.classes.iter().enumerate() {
        for i in 0..n_per_class {
            let mut chain = Vec::with_capacity(spec.s);
            let mut state = rng.random_range(0..spec.n_archetypes);
            for t in 0..spec.s {
                if t > 0 {
                    state = sample_categorical(&mut rng, &class.transitions[state]);
                }
                chain.push(state);
            }
            let sequences = chain
                .iter()
                .map(|&a| {
                    let arch = &spec.archetypes[a];
                    let len = rng.random_range(arch.length.min..=arch.length.max);
                    GameSequence {
                        games: (0..len)
                            .map(|_| GameRecord {
                                features: (0..width)
                                    .map(|j| {
                                        let z: f64 = rng.sample(StandardNormal);
                                        arch.mean[j] + arch.std[j] * z
                                    })
                                    .collect(),
                            })
                            .collect(),
                    }
                })
                .collect();
            samples.push(PlayerSample {
                player_id: format!("{}-{i:04}", class.label),
                label,
                sequences,
                archetypes: Some(chain),
            });
        }
    }
    Ok(Dataset { samples, width })
}

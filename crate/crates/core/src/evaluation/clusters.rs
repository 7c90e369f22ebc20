use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::TransitionMatrix;
use crate::data::Dataset;

use super::EvalError;

/// Shannon entropy in bits of the normalized cell distribution; an
/// all-zero matrix has entropy 0.
pub fn adjacency_entropy(matrix: &TransitionMatrix) -> f64 {
    matrix
        .normalized
        .as_slice()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Adjusted Rand index between two partitions of the same items.
pub fn cluster_recovery(assignments: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    if assignments.len() != truth.len() {
        return Err(EvalError::Length(assignments.len(), truth.len()));
    }
    let n = assignments.len();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let comb2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in assignments.iter().zip(truth) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| comb2(v)).sum();
    let sa: f64 = rows.values().map(|&v| comb2(v)).sum();
    let sb: f64 = cols.values().map(|&v| comb2(v)).sum();
    let expected = sa * sb / comb2(n as u64).max(f64::MIN_POSITIVE);
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        // both partitions trivial in the same way
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Raw-scale summary of the sequences assigned to one cluster. Statistics
/// pool every game of every member sequence; they are `None` for an empty
/// cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: usize,
    pub count: usize,
    pub mean_length: Option<f64>,
    pub features: Option<Vec<FeatureStats>>,
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One assignment of a real sequence: `(player index, sequence index, cluster)`.
pub type SequenceAssignment = (usize, usize, usize);

/// Profiles for clusters `0..k`, sorted by population (descending, ties by
/// cluster id).
pub fn cluster_profiles(
    dataset: &Dataset,
    assignments: &[SequenceAssignment],
    k: usize,
    feature_names: &[String],
) -> Result<Vec<ClusterProfile>, EvalError> {
    let f = dataset.width;
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k];
    for &(p, s, c) in assignments {
        if c >= k {
            return Err(EvalError::Class(c, k));
        }
        if p >= dataset.samples.len() || s >= dataset.samples[p].sequences.len() {
            return Err(EvalError::Length(p, s));
        }
        members[c].push((p, s));
    }
    let mut profiles: Vec<ClusterProfile> = members
        .iter()
        .enumerate()
        .map(|(c, m)| {
            if m.is_empty() {
                return ClusterProfile {
                    cluster: c,
                    count: 0,
                    mean_length: None,
                    features: None,
                };
            }
            let mut columns: Vec<Vec<f64>> = vec![Vec::new(); f];
            let mut total_len = 0usize;
            for &(p, s) in m {
                let seq = &dataset.samples[p].sequences[s];
                total_len += seq.len();
                for g in &seq.games {
                    for (col, &v) in columns.iter_mut().zip(&g.features) {
                        col.push(v);
                    }
                }
            }
            let features = (total_len > 0).then(|| {
                columns
                    .into_iter()
                    .enumerate()
                    .map(|(j, mut col)| {
                        col.sort_by(f64::total_cmp);
                        FeatureStats {
                            name: feature_names.get(j).cloned().unwrap_or_else(|| format!("f{j}")),
                            mean: col.iter().sum::<f64>() / col.len() as f64,
                            median: quantile(&col, 0.5),
                            q1: quantile(&col, 0.25),
                            q3: quantile(&col, 0.75),
                        }
                    })
                    .collect()
            });
            ClusterProfile {
                cluster: c,
                count: m.len(),
                mean_length: Some(total_len as f64 / m.len() as f64),
                features,
            }
        })
        .collect();
    profiles.sort_by(|a, b| b.count.cmp(&a.count).then(a.cluster.cmp(&b.cluster)));
    Ok(profiles)
}

/// CSV with one row per (cluster, feature).
pub fn profiles_csv(profiles: &[ClusterProfile]) -> String {
    let mut out = String::from("cluster,count,mean_length,feature,mean,median,q1,q3\n");
    for p in profiles {
        let len = p.mean_length.map_or(String::new(), |l| format!("{l:.6}"));
        match &p.features {
            Some(fs) => {
                for s in fs {
                    out += &format!(
                        "{},{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                        p.cluster, p.count, len, s.name, s.mean, s.median, s.q1, s.q3
                    );
                }
            }
            None => out += &format!("{},{},{},,,,,\n", p.cluster, p.count, len),
        }
    }
    out
}

/// One exported latent row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub player_id: String,
    pub seq_index: usize,
    pub cluster_id: usize,
    pub h: Vec<f64>,
}

/// Writes `player_id,seq_index,cluster_id,h_1..h_M` with 17 significant
/// digits so values parse back exactly.
pub fn export_embeddings(rows: &[EmbeddingRow], path: &Path) -> Result<(), EvalError> {
    let m = rows.first().map_or(0, |r| r.h.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["player_id".to_string(), "seq_index".into(), "cluster_id".into()];
    header.extend((1..=m).map(|i| format!("h_{i}")));
    w.write_record(&header)?;
    for r in rows {
        if r.h.len() != m {
            return Err(EvalError::Length(r.h.len(), m));
        }
        let mut rec = vec![r.player_id.clone(), r.seq_index.to_string(), r.cluster_id.to_string()];
        rec.extend(r.h.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| EvalError::Parse(format!("bad {what} in embeddings row {}", rows.len() + 1));
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<usize>().ok());
        rows.push(EmbeddingRow {
            player_id: rec.get(0).ok_or_else(|| bad("player_id"))?.to_string(),
            seq_index: num(1).ok_or_else(|| bad("seq_index"))?,
            cluster_id: num(2).ok_or_else(|| bad("cluster_id"))?,
            h: rec
                .iter()
                .skip(3)
                .map(|s| s.parse::<f64>().map_err(|_| bad("latent value")))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::build_adjacency;
    use crate::data::{GameRecord, GameSequence, PlayerSample};

    #[test]
    fn entropy_examples() {
        let single = build_adjacency(&[Some(1), Some(1), Some(1)], 3).unwrap();
        assert_eq!(adjacency_entropy(&single), 0.0);
        let three = build_adjacency(&[Some(0), Some(1), Some(1), Some(0)], 2).unwrap();
        assert!((adjacency_entropy(&three) - 3f64.log2()).abs() < 1e-12);
        let empty = build_adjacency(&[Some(0)], 2).unwrap();
        assert_eq!(adjacency_entropy(&empty), 0.0);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(cluster_recovery(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(cluster_recovery(&[5, 5, 7, 7, 9], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(cluster_recovery(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap(), 0.0);
        // hand-computed: contingency [[2,1],[0,2]] → ARI = 1/6
        let ari = cluster_recovery(&[0, 0, 0, 1, 1], &[0, 0, 1, 1, 1]).unwrap();
        assert!((ari - 1.0 / 6.0).abs() < 1e-12, "{ari}");
    }

    fn dataset() -> Dataset {
        let seq = |v: &[f64]| GameSequence {
            games: v.iter().map(|&x| GameRecord { features: vec![x] }).collect(),
        };
        Dataset {
            samples: vec![PlayerSample {
                player_id: "p".into(),
                label: 0,
                sequences: vec![seq(&[1.0, 2.0, 3.0]), seq(&[10.0]), seq(&[4.0, 5.0])],
                archetypes: None,
            }],
            width: 1,
        }
    }

    #[test]
    fn profiles_sorted_and_counted() {
        let names = vec!["x".to_string()];
        let p = cluster_profiles(&dataset(), &[(0, 0, 2), (0, 1, 0), (0, 2, 2)], 3, &names).unwrap();
        assert_eq!(p.iter().map(|c| c.cluster).collect::<Vec<_>>(), vec![2, 0, 1]);
        assert_eq!(p[0].count, 2);
        let fs = p[0].features.as_ref().unwrap();
        assert_eq!(fs[0].mean, 3.0);
        assert_eq!(fs[0].median, 3.0);
        assert_eq!(fs[0].q1, 2.0);
        assert_eq!(p[0].mean_length, Some(2.5));
        assert_eq!(p[2].count, 0);
        assert!(p[2].features.is_none());
        assert_eq!(p.iter().map(|c| c.count).sum::<usize>(), 3);
    }
}

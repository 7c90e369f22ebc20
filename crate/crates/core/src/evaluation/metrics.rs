use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Per-class precision and recall in percent, with the confusion matrix
/// (`confusion[true][predicted]`) they were derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Classes never predicted; their precision is reported as 0.
    pub precision_undefined: Vec<bool>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub confusion: Vec<Vec<u64>>,
    pub support: Vec<u64>,
    pub config_hash: String,
    pub seed: u64,
}

pub fn precision_recall(predictions: &[usize], labels: &[usize], classes: &[String]) -> Result<MetricsReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    if predictions.len() != labels.len() {
        return Err(EvalError::Length(predictions.len(), labels.len()));
    }
    let c = classes.len();
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&x| x >= c) {
        return Err(EvalError::Class(bad, c));
    }
    let mut confusion = vec![vec![0u64; c]; c];
    for (&p, &y) in predictions.iter().zip(labels) {
        confusion[y][p] += 1;
    }
    let support: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<u64> = (0..c).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
    let pct = |num: u64, den: u64| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let recall: Vec<f64> = (0..c).map(|i| pct(confusion[i][i], support[i])).collect();
    let precision: Vec<f64> = (0..c).map(|i| pct(confusion[i][i], predicted[i])).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / c as f64;
    Ok(MetricsReport {
        classes: classes.to_vec(),
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        precision_undefined: predicted.iter().map(|&n| n == 0).collect(),
        precision,
        recall,
        confusion,
        support,
        config_hash: String::new(),
        seed: 0,
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

impl MetricsReport {
    /// CSV with one row per (class, metric) plus the macro averages.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,metric,value\n");
        for (i, name) in self.classes.iter().enumerate() {
            out += &format!("{name},precision,{}\n", fmt(self.precision[i]));
            out += &format!("{name},recall,{}\n", fmt(self.recall[i]));
        }
        out += &format!("macro,precision,{}\n", fmt(self.macro_precision));
        out += &format!("macro,recall,{}\n", fmt(self.macro_recall));
        out
    }

    /// Confusion matrix CSV: rows are true classes, columns predictions.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for n in &self.classes {
            out += &format!(",{n}");
        }
        out.push('\n');
        for (name, row) in self.classes.iter().zip(&self.confusion) {
            out += name;
            for v in row {
                out += &format!(",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.csv"), self.to_csv())?;
        std::fs::write(dir.join("confusion.csv"), self.confusion_csv())?;
        let mut f = std::fs::File::create(dir.join("metrics.json"))?;
        f.write_all(serde_json::to_string_pretty(self).map_err(std::io::Error::other)?.as_bytes())?;
        f.write_all(b"\n")
    }
}

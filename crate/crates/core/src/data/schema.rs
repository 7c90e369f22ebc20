use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::DataError;

/// Engagement classes used when a schema does not list its own labels.
pub const DEFAULT_LABELS: [&str; 3] = ["Sustainer", "Burnout", "Churnout"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Boolean,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            categories: None,
        }
    }

    /// Encoded width of this feature.
    pub fn width(&self) -> usize {
        match self.kind {
            FeatureKind::Categorical => self.categories.as_ref().map_or(0, Vec::len),
            _ => 1,
        }
    }
}

/// Feature layout of one game and the class label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    #[serde(default = "default_labels")]
    pub labels: Vec<String>,
}

fn default_labels() -> Vec<String> {
    DEFAULT_LABELS.iter().map(|s| s.to_string()).collect()
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self, DataError> {
        let s = Self {
            features,
            labels: default_labels(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn numeric(names: &[String]) -> Self {
        Self {
            features: names.iter().map(FeatureSpec::numeric).collect(),
            labels: default_labels(),
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = labels;
        self
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let s: Self = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.features.is_empty() {
            return Err(DataError::Schema("schema has no features".into()));
        }
        if self.labels.is_empty() {
            return Err(DataError::Schema("schema has no labels".into()));
        }
        for (i, f) in self.features.iter().enumerate() {
            if self.features[..i].iter().any(|g| g.name == f.name) {
                return Err(DataError::Schema(format!("duplicate feature '{}'", f.name)));
            }
            match (&f.kind, &f.categories) {
                (FeatureKind::Categorical, Some(c)) if !c.is_empty() => {}
                (FeatureKind::Categorical, _) => {
                    return Err(DataError::Schema(format!(
                        "categorical feature '{}' needs a non-empty category list",
                        f.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Encoded width `F`.
    pub fn width(&self) -> usize {
        self.features.iter().map(FeatureSpec::width).sum()
    }

    /// Whether each encoded column comes from a numeric feature (and so is
    /// eligible for z-scoring).
    pub fn numeric_columns(&self) -> Vec<bool> {
        self.features
            .iter()
            .flat_map(|f| std::iter::repeat_n(f.kind == FeatureKind::Numeric, f.width()))
            .collect()
    }

    /// Names of the encoded columns (`feature=category` for one-hot).
    pub fn column_names(&self) -> Vec<String> {
        self.features
            .iter()
            .flat_map(|f| match &f.categories {
                Some(cats) if f.kind == FeatureKind::Categorical => {
                    cats.iter().map(|c| format!("{}={c}", f.name)).collect()
                }
                _ => vec![f.name.clone()],
            })
            .collect()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Encodes one game object. Missing features encode as zeros.
    pub fn encode_game(&self, game: &serde_json::Map<String, Value>) -> Result<Vec<f64>, String> {
        for key in game.keys() {
            if !self.features.iter().any(|f| &f.name == key) {
                return Err(format!("unknown feature '{key}'"));
            }
        }
        let mut out = Vec::with_capacity(self.width());
        for f in &self.features {
            let v = game.get(&f.name);
            match f.kind {
                FeatureKind::Numeric => out.push(match v {
                    None | Some(Value::Null) => 0.0,
                    Some(Value::Number(n)) => n
                        .as_f64()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| format!("feature '{}' is not a finite number", f.name))?,
                    Some(other) => return Err(format!("feature '{}' expects a number, got {other}", f.name)),
                }),
                FeatureKind::Boolean => out.push(match v {
                    None | Some(Value::Null) => 0.0,
                    Some(Value::Bool(b)) => f64::from(u8::from(*b)),
                    Some(Value::Number(n)) if n.as_f64() == Some(0.0) => 0.0,
                    Some(Value::Number(n)) if n.as_f64() == Some(1.0) => 1.0,
                    Some(other) => return Err(format!("feature '{}' expects a boolean, got {other}", f.name)),
                }),
                FeatureKind::Categorical => {
                    let cats = f.categories.as_deref().unwrap_or_default();
                    let mut onehot = vec![0.0; cats.len()];
                    match v {
                        None | Some(Value::Null) => {}
                        Some(Value::String(s)) => {
                            let i = cats
                                .iter()
                                .position(|c| c == s)
                                .ok_or_else(|| format!("unknown category '{s}' for feature '{}'", f.name))?;
                            onehot[i] = 1.0;
                        }
                        Some(other) => {
                            return Err(format!("feature '{}' expects a category string, got {other}", f.name))
                        }
                    }
                    out.extend(onehot);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode_game`](Self::encode_game) for writing datasets.
    pub fn decode_game(&self, features: &[f64]) -> serde_json::Map<String, Value> {
        let mut map = serde_json::Map::new();
        let mut off = 0;
        for f in &self.features {
            match f.kind {
                FeatureKind::Numeric => {
                    map.insert(f.name.clone(), Value::from(features[off]));
                }
                FeatureKind::Boolean => {
                    map.insert(f.name.clone(), Value::Bool(features[off] != 0.0));
                }
                FeatureKind::Categorical => {
                    let cats = f.categories.as_deref().unwrap_or_default();
                    if let Some(i) = features[off..off + cats.len()].iter().position(|&x| x != 0.0) {
                        map.insert(f.name.clone(), Value::String(cats[i].clone()));
                    }
                }
            }
            off += f.width();
        }
        map
    }
}

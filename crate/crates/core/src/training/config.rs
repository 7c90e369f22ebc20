use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::Variant;

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Number of clusters K.
    pub k: usize,
    /// Trace-loss weight λ.
    pub lambda: f64,
    /// Interpreter-vs-bridge balance β.
    pub beta: f64,
    /// Cluster-indicator refresh period I, in interpreter iterations.
    pub refresh_period: usize,
    pub collaborative_epochs: usize,
    pub interpreter_inner_epochs: usize,
    pub classifier_inner_epochs: usize,
    /// Players per batch B2; the interpreter sees their `S·B2` sequences.
    pub players_per_batch: usize,
    pub lr_interpreter: f64,
    pub lr_classifier: f64,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
    pub attention_dim: usize,
    pub classifier_hidden: usize,
    pub conv_channels: [usize; 2],
    pub variant: Variant,
    pub test_fraction: f64,
    /// Sequences per player S; the largest player count when unset.
    pub sequences_per_player: Option<usize>,
    /// Sequence length L; the 95th-percentile length when unset.
    pub pad_length: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            k: 7,
            lambda: 0.5,
            beta: 0.3,
            refresh_period: 10,
            collaborative_epochs: 8,
            interpreter_inner_epochs: 60,
            classifier_inner_epochs: 60,
            players_per_batch: 8,
            lr_interpreter: 1e-3,
            lr_classifier: 1e-3,
            seed: 0,
            hidden_sizes: vec![64, 32, 16],
            attention_dim: 16,
            classifier_hidden: 16,
            conv_channels: [4, 8],
            variant: Variant::TransitionMatrix,
            test_fraction: 0.2,
            sequences_per_player: None,
            pad_length: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .parse()
        .map_err(|_| TrainError::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, TrainError> {
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>, TrainError> {
    match value {
        "" | "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl TrainingConfig {
    /// Recognized keys, in canonical order.
    pub const KEYS: [&'static str; 19] = [
        "k",
        "lambda",
        "beta",
        "refresh_period",
        "collaborative_epochs",
        "interpreter_inner_epochs",
        "classifier_inner_epochs",
        "players_per_batch",
        "lr_interpreter",
        "lr_classifier",
        "seed",
        "hidden_sizes",
        "attention_dim",
        "classifier_hidden",
        "conv_channels",
        "variant",
        "test_fraction",
        "sequences_per_player",
        "pad_length",
    ];

    /// Maps the short paper-style names onto field names.
    pub fn canonical_key(key: &str) -> &str {
        match key {
            "K" => "k",
            "I" => "refresh_period",
            "B2" => "players_per_batch",
            "S" => "sequences_per_player",
            "L" => "pad_length",
            other => other,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let value = value.trim();
        let key = Self::canonical_key(key.trim());
        match key {
            "k" => self.k = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "refresh_period" => self.refresh_period = parse(key, value)?,
            "collaborative_epochs" => self.collaborative_epochs = parse(key, value)?,
            "interpreter_inner_epochs" => self.interpreter_inner_epochs = parse(key, value)?,
            "classifier_inner_epochs" => self.classifier_inner_epochs = parse(key, value)?,
            "players_per_batch" => self.players_per_batch = parse(key, value)?,
            "lr_interpreter" => self.lr_interpreter = parse(key, value)?,
            "lr_classifier" => self.lr_classifier = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hidden_sizes" => self.hidden_sizes = parse_list(key, value)?,
            "attention_dim" => self.attention_dim = parse(key, value)?,
            "classifier_hidden" => self.classifier_hidden = parse(key, value)?,
            "conv_channels" => {
                let v = parse_list(key, value)?;
                self.conv_channels = v
                    .try_into()
                    .map_err(|_| TrainError::Config("conv_channels needs exactly two values".into()))?;
            }
            "variant" => {
                self.variant = value
                    .parse()
                    .map_err(|e: crate::classifier::ClassifierError| TrainError::Config(e.to_string()))?
            }
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "sequences_per_player" => self.sequences_per_player = parse_optional(key, value)?,
            "pad_length" => self.pad_length = parse_optional(key, value)?,
            other => return Err(TrainError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), TrainError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            self.set(k, v)
                .map_err(|e| TrainError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |x| x.to_string());
        Some(match Self::canonical_key(key) {
            "k" => self.k.to_string(),
            "lambda" => self.lambda.to_string(),
            "beta" => self.beta.to_string(),
            "refresh_period" => self.refresh_period.to_string(),
            "collaborative_epochs" => self.collaborative_epochs.to_string(),
            "interpreter_inner_epochs" => self.interpreter_inner_epochs.to_string(),
            "classifier_inner_epochs" => self.classifier_inner_epochs.to_string(),
            "players_per_batch" => self.players_per_batch.to_string(),
            "lr_interpreter" => self.lr_interpreter.to_string(),
            "lr_classifier" => self.lr_classifier.to_string(),
            "seed" => self.seed.to_string(),
            "hidden_sizes" => join(&self.hidden_sizes),
            "attention_dim" => self.attention_dim.to_string(),
            "classifier_hidden" => self.classifier_hidden.to_string(),
            "conv_channels" => join(&self.conv_channels),
            "variant" => self.variant.as_str().to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "sequences_per_player" => opt(self.sequences_per_player),
            "pad_length" => opt(self.pad_length),
            _ => return None,
        })
    }

    /// Canonical `key = value` text; parses back to an equal config.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if self.refresh_period == 0 {
            return bad("refresh_period (I) must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.collaborative_epochs == 0 {
            return bad("collaborative_epochs must be at least 1");
        }
        if self.players_per_batch == 0 {
            return bad("players_per_batch must be positive");
        }
        if !(self.lr_interpreter > 0.0 && self.lr_classifier > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes must be positive");
        }
        if self.attention_dim == 0 || self.classifier_hidden == 0 || self.conv_channels.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        if self.sequences_per_player == Some(0) || self.pad_length == Some(0) {
            return bad("sequences_per_player and pad_length must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainingConfig::default();
        c.apply_text("K = 5\n# comment\nbeta=0.4  # trailing\nhidden_sizes = 8, 4,4\nvariant = S\nS = 12\n")
            .unwrap();
        assert_eq!(c.k, 5);
        assert_eq!(c.beta, 0.4);
        assert_eq!(c.hidden_sizes, vec![8, 4, 4]);
        assert_eq!(c.variant, Variant::Sequential);
        assert_eq!(c.sequences_per_player, Some(12));
        let back = TrainingConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = TrainingConfig::default();
        assert!(c.apply_text("nonsense").is_err());
        assert!(c.apply_text("unknown = 1").is_err());
        assert!(c.apply_text("k = seven").is_err());
        assert!(TrainingConfig::from_text("beta = 0").is_err());
        assert!(TrainingConfig::from_text("beta = 1").is_ok());
        assert!(TrainingConfig::from_text("lambda = -1").is_err());
        assert!(TrainingConfig::from_text("I = 0").is_err());
    }
}

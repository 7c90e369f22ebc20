use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::{read_checkpoint, restore_params, write_checkpoint};
use crate::numerics::{Graph, Matrix, ParamId, ParamStore, Tensor, Var};

use super::ClassifierError;

/// Input mapping and matching architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Transition matrix through two 3×3 convolutions.
    #[serde(rename = "TM")]
    TransitionMatrix,
    /// Ordered latent rows through a recurrent layer.
    #[serde(rename = "S")]
    Sequential,
    /// Cluster frequency histogram through a dense layer.
    #[serde(rename = "F")]
    Frequency,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TransitionMatrix => "TM",
            Variant::Sequential => "S",
            Variant::Frequency => "F",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TM" | "tm" => Ok(Variant::TransitionMatrix),
            "S" | "s" => Ok(Variant::Sequential),
            "F" | "f" => Ok(Variant::Frequency),
            other => Err(ClassifierError::Config(format!("unknown variant '{other}' (expected TM, S or F)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub variant: Variant,
    /// Number of clusters K.
    pub k: usize,
    /// Sequences per player S; also the penultimate width.
    pub s: usize,
    /// Latent width M, read by the sequential variant only.
    pub latent_dim: usize,
    pub classes: usize,
    pub conv_channels: [usize; 2],
    pub recurrent_hidden: usize,
}

impl ClassifierConfig {
    /// Width of one mapped input row.
    pub fn input_width(&self) -> usize {
        match self.variant {
            Variant::TransitionMatrix => self.k * self.k,
            Variant::Sequential => self.s * self.latent_dim,
            Variant::Frequency => self.k,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let positive = [
            ("k", self.k),
            ("s", self.s),
            ("classes", self.classes),
            ("conv_channels[0]", self.conv_channels[0]),
            ("conv_channels[1]", self.conv_channels[1]),
            ("recurrent_hidden", self.recurrent_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ClassifierError::Config(format!("{name} must be positive")));
        }
        if self.variant == Variant::Sequential && self.latent_dim == 0 {
            return Err(ClassifierError::Config("latent_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Outputs for one player.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierActivations {
    /// Post-ReLU penultimate layer, length S.
    pub penultimate: Vec<f64>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassifierActivations {
    pub fn predicted(&self) -> usize {
        self.probabilities
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

/// Graph nodes of a batched forward pass, each with one row per player.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierNodes {
    pub penultimate: Var,
    pub logits: Var,
    pub probabilities: Var,
}

#[derive(Clone, Debug)]
enum Body {
    Conv { k1: ParamId, b1: ParamId, k2: ParamId, b2: ParamId },
    Recurrent { w: ParamId, b: ParamId },
    Dense,
}

#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub config: ClassifierConfig,
    pub params: ParamStore,
    body: Body,
    hidden_w: ParamId,
    hidden_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect()).expect("shape")
}

/// Im2col indices for a 3×3 same-padded convolution over a `k × k` grid.
/// `src` rows are `(player, cell)` pairs with `cin` channel columns; output
/// rows match and columns run over `(channel, dy, dx)`.
fn im2col_index(batch: usize, k: usize, cin: usize) -> Vec<usize> {
    let cells = k * k;
    let mut idx = Vec::with_capacity(batch * cells * cin * 9);
    for b in 0..batch {
        for y in 0..k {
            for x in 0..k {
                for c in 0..cin {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (sy, sx) = ((y + dy).wrapping_sub(1), (x + dx).wrapping_sub(1));
                            idx.push(if sy < k && sx < k {
                                ((b * cells + sy * k + sx) * cin) + c
                            } else {
                                usize::MAX
                            });
                        }
                    }
                }
            }
        }
    }
    idx
}

impl ClassifierModel {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self, ClassifierError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (body, feat) = match config.variant {
            Variant::TransitionMatrix => {
                let [c1, c2] = config.conv_channels;
                let k1 = params.add("conv1.w", uniform(&mut rng, vec![9, c1], 9));
                let b1 = params.add("conv1.b", Tensor::zeros(vec![c1]));
                let k2 = params.add("conv2.w", uniform(&mut rng, vec![9 * c1, c2], 9 * c1));
                let b2 = params.add("conv2.b", Tensor::zeros(vec![c2]));
                (Body::Conv { k1, b1, k2, b2 }, config.k * config.k * c2)
            }
            Variant::Sequential => {
                let r = config.recurrent_hidden;
                let w = params.add("rnn.w", uniform(&mut rng, vec![config.latent_dim + r, 4 * r], r));
                let mut bias = Tensor::zeros(vec![4 * r]);
                bias.values_mut()[r..2 * r].fill(1.0);
                let b = params.add("rnn.b", bias);
                (Body::Recurrent { w, b }, r)
            }
            Variant::Frequency => (Body::Dense, config.k),
        };
        let hidden_w = params.add("hidden.w", uniform(&mut rng, vec![feat, config.s], feat));
        let hidden_b = params.add("hidden.b", Tensor::zeros(vec![config.s]));
        let out_w = params.add("out.w", uniform(&mut rng, vec![config.s, config.classes], config.s));
        let out_b = params.add("out.b", Tensor::zeros(vec![config.classes]));
        Ok(Self {
            config,
            params,
            body,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        })
    }

    fn p(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(id, self.params.get(id))
    }

    /// Batched forward pass; `input` has one mapped row per player.
    pub fn forward_graph(&self, g: &mut Graph, input: Var) -> Result<ClassifierNodes, ClassifierError> {
        let (b, width) = g.value(input).shape();
        if width != self.config.input_width() {
            return Err(ClassifierError::Shape(format!(
                "{} input rows have width {width}, expected {}",
                self.config.variant.as_str(),
                self.config.input_width()
            )));
        }
        let features = match &self.body {
            Body::Conv { k1, b1, k2, b2 } => {
                let k = self.config.k;
                let [c1, c2] = self.config.conv_channels;
                let cells = b * k * k;
                let p1 = g.gather(input, cells, 9, im2col_index(b, k, 1));
                let w1 = self.p(g, *k1);
                let bias1 = self.p(g, *b1);
                let z1 = g.matmul(p1, w1);
                let z1 = g.add_row(z1, bias1);
                let a1 = g.relu(z1);
                let p2 = g.gather(a1, cells, 9 * c1, im2col_index(b, k, c1));
                let w2 = self.p(g, *k2);
                let bias2 = self.p(g, *b2);
                let z2 = g.matmul(p2, w2);
                let z2 = g.add_row(z2, bias2);
                let a2 = g.relu(z2);
                g.reshape(a2, b, k * k * c2)
            }
            Body::Recurrent { w, b: bias } => {
                let (m, r) = (self.config.latent_dim, self.config.recurrent_hidden);
                let w = self.p(g, *w);
                let bias = self.p(g, *bias);
                let mut h = g.constant(Matrix::zeros(b, r));
                let mut c = g.constant(Matrix::zeros(b, r));
                for t in 0..self.config.s {
                    let x = g.slice_cols(input, t * m, m);
                    let z = g.concat_cols(&[x, h]);
                    let zw = g.matmul(z, w);
                    let gates = g.add_row(zw, bias);
                    let hc = g.lstm_cell(gates, c);
                    h = g.slice_cols(hc, 0, r);
                    c = g.slice_cols(hc, r, r);
                }
                h
            }
            Body::Dense => input,
        };
        let hw = self.p(g, self.hidden_w);
        let hb = self.p(g, self.hidden_b);
        let z = g.matmul(features, hw);
        let z = g.add_row(z, hb);
        let penultimate = g.relu(z);
        let ow = self.p(g, self.out_w);
        let ob = self.p(g, self.out_b);
        let logits = g.matmul(penultimate, ow);
        let logits = g.add_row(logits, ob);
        let probabilities = g.softmax_rows(logits);
        Ok(ClassifierNodes {
            penultimate,
            logits,
            probabilities,
        })
    }

    /// Forward pass without gradients, one activation set per input row.
    pub fn forward(&self, input: &Matrix) -> Result<Vec<ClassifierActivations>, ClassifierError> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let nodes = self.forward_graph(&mut g, x)?;
        let (pen, log, prob) = (
            g.value(nodes.penultimate),
            g.value(nodes.logits),
            g.value(nodes.probabilities),
        );
        if !log.is_finite() {
            return Err(ClassifierError::NonFinite);
        }
        Ok((0..input.rows())
            .map(|r| ClassifierActivations {
                penultimate: pen.row(r).to_vec(),
                logits: log.row(r).to_vec(),
                probabilities: prob.row(r).to_vec(),
            })
            .collect())
    }

    pub fn save(&self, dir: &Path, extra: Value) -> Result<(), ClassifierError> {
        let meta = serde_json::json!({
            "kind": "classifier",
            "config": self.config,
            "extra": extra,
        });
        write_checkpoint(dir, &meta, &self.params)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, Value), ClassifierError> {
        let (meta, store) = read_checkpoint(dir)?;
        if meta.get("kind").and_then(Value::as_str) != Some("classifier") {
            return Err(ClassifierError::Config(format!("{} is not a classifier checkpoint", dir.display())));
        }
        let config: ClassifierConfig =
            serde_json::from_value(meta["config"].clone()).map_err(|e| ClassifierError::Config(e.to_string()))?;
        let mut model = Self::new(config, 0)?;
        restore_params(&mut model.params, &store)?;
        Ok((model, meta["extra"].clone()))
    }
}

/// Batch-averaged categorical cross entropy with probabilities floored at
/// 1e-12.
pub fn cce_loss(probabilities: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(probabilities.len(), labels.len());
    probabilities
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].max(crate::numerics::PROB_FLOOR).ln())
        .sum::<f64>()
        / labels.len() as f64
}

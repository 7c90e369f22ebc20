use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::{read_checkpoint, restore_params, write_checkpoint};
use crate::data::PaddedSample;
use crate::numerics::{Graph, Matrix, ParamId, ParamStore, Tensor, Var};

use super::InterpreterError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpreterConfig {
    /// Encoded feature width F.
    pub features: usize,
    /// Hidden size of each stacked layer, encoder and decoder alike.
    pub hidden: Vec<usize>,
    /// Width of the additive attention projection.
    pub attention_dim: usize,
    /// Length of the bridge reducer weight vector (S); 0 omits it.
    pub reducer_len: usize,
}

impl InterpreterConfig {
    pub fn latent_dim(&self) -> usize {
        self.hidden.iter().sum()
    }

    pub fn validate(&self) -> Result<(), InterpreterError> {
        if self.features == 0 {
            return Err(InterpreterError::Config("feature width must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(InterpreterError::Config(format!(
                "hidden sizes must be non-empty and positive, got {:?}",
                self.hidden
            )));
        }
        if self.attention_dim == 0 {
            return Err(InterpreterError::Config("attention_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Row `i` of a batch came from sequence `position` of player `player`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceId {
    pub player: usize,
    pub position: usize,
}

/// Padded sequences flattened for the recurrent stack: row `i` of `x` is
/// sequence `i` laid out as `L` consecutive blocks of `F` features.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub x: Matrix,
    pub valid_lengths: Vec<usize>,
    pub ids: Vec<SequenceId>,
    pub l: usize,
    pub f: usize,
}

impl SequenceBatch {
    /// Stacks every sequence of the given players, player-major, so each
    /// player's `S` sequences are contiguous rows.
    pub fn from_players(samples: &[&PaddedSample], player_indices: &[usize], l: usize, f: usize) -> Self {
        assert_eq!(samples.len(), player_indices.len());
        let n: usize = samples.iter().map(|s| s.sequences.len()).sum();
        let mut x = Matrix::zeros(n, l * f);
        let mut valid_lengths = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        let mut row = 0;
        for (s, &p) in samples.iter().zip(player_indices) {
            for (pos, q) in s.sequences.iter().enumerate() {
                assert_eq!(q.values.shape(), (l, f), "sequence shape must be (L, F)");
                x.row_mut(row).copy_from_slice(q.values.as_slice());
                valid_lengths.push(q.valid_length);
                ids.push(SequenceId { player: p, position: pos });
                row += 1;
            }
        }
        Self {
            x,
            valid_lengths,
            ids,
            l,
            f,
        }
    }

    pub fn len(&self) -> usize {
        self.valid_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_lengths.is_empty()
    }

    /// Features of every sequence at timestep `t` (`B × F`).
    pub fn step(&self, t: usize) -> Matrix {
        let b = self.len();
        let mut m = Matrix::zeros(b, self.f);
        for r in 0..b {
            m.row_mut(r)
                .copy_from_slice(&self.x.row(r)[t * self.f..(t + 1) * self.f]);
        }
        m
    }
}

/// Latent representations of a batch, one row per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub h: Matrix,
    pub ids: Vec<SequenceId>,
}

/// Graph nodes produced by the encoder for one batch.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    /// `B × M` latent, the concatenated per-layer states at the last valid step.
    pub latent: Var,
    /// Per layer, the `B × h_ℓ` state at the last valid step.
    pub final_hidden: Vec<Var>,
    /// Per layer, all outputs laid out as `B × (L·h_ℓ)`.
    pub outputs: Vec<Var>,
}

#[derive(Clone, Debug)]
struct LayerIds {
    enc_w: ParamId,
    enc_b: ParamId,
    dec_w: ParamId,
    dec_b: ParamId,
    att_we: ParamId,
    att_wd: ParamId,
    att_v: ParamId,
}

/// Stacked recurrent encoder–decoder with per-layer additive attention.
#[derive(Clone, Debug)]
pub struct InterpreterModel {
    pub config: InterpreterConfig,
    pub params: ParamStore,
    layers: Vec<LayerIds>,
    out_w: ParamId,
    out_b: ParamId,
    reducer: Option<ParamId>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, values).expect("shape matches value count")
}

impl InterpreterModel {
    /// Randomly initialized model. LSTM and attention weights are uniform in
    /// `±1/√h`; forget-gate biases start at 1.
    pub fn new(config: InterpreterConfig, seed: u64) -> Result<Self, InterpreterError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let f = config.features;
        let a = config.attention_dim;
        let mut layers = Vec::with_capacity(config.hidden.len());
        for (l, &h) in config.hidden.iter().enumerate() {
            let input = if l == 0 { f } else { config.hidden[l - 1] };
            let bound = 1.0 / (h as f64).sqrt();
            let mut bias = Tensor::zeros(vec![4 * h]);
            bias.values_mut()[h..2 * h].fill(1.0);
            let enc_w = params.add(format!("enc{l}.w"), uniform(&mut rng, vec![input + h, 4 * h], bound));
            let enc_b = params.add(format!("enc{l}.b"), bias.clone());
            let dec_w = params.add(format!("dec{l}.w"), uniform(&mut rng, vec![input + 2 * h, 4 * h], bound));
            let dec_b = params.add(format!("dec{l}.b"), bias);
            let att_we = params.add(format!("att{l}.we"), uniform(&mut rng, vec![h, a], bound));
            let att_wd = params.add(format!("att{l}.wd"), uniform(&mut rng, vec![h, a], bound));
            let att_v = params.add(format!("att{l}.v"), uniform(&mut rng, vec![a], 1.0 / (a as f64).sqrt()));
            layers.push(LayerIds {
                enc_w,
                enc_b,
                dec_w,
                dec_b,
                att_we,
                att_wd,
                att_v,
            });
        }
        let top = *config.hidden.last().expect("validated non-empty");
        let out_w = params.add("out.w", uniform(&mut rng, vec![top, f], 1.0 / (top as f64).sqrt()));
        let out_b = params.add("out.b", Tensor::zeros(vec![f]));
        let reducer = (config.reducer_len > 0).then(|| {
            let s = config.reducer_len;
            params.add("reducer.w", uniform(&mut rng, vec![s], 1.0 / (s as f64).sqrt()))
        });
        Ok(Self {
            config,
            params,
            layers,
            out_w,
            out_b,
            reducer,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    /// Bridge reducer weight vector, if the model was built with one.
    pub fn reducer(&self) -> Option<ParamId> {
        self.reducer
    }

    fn check_batch(&self, batch: &SequenceBatch) -> Result<(), InterpreterError> {
        if batch.f != self.config.features || batch.x.cols() != batch.l * batch.f || batch.l == 0 {
            return Err(InterpreterError::Shape(format!(
                "batch is (L={}, F={}) with {} columns, model expects F={}",
                batch.l,
                batch.f,
                batch.x.cols(),
                self.config.features
            )));
        }
        if batch.is_empty() {
            return Err(InterpreterError::Shape("empty batch".into()));
        }
        Ok(())
    }

    fn cell(g: &mut Graph, w: Var, b: Var, input: Var, h: Var, c: Var, size: usize) -> (Var, Var) {
        let z = g.concat_cols(&[input, h]);
        let zw = g.matmul(z, w);
        let gates = g.add_row(zw, b);
        let hc = g.lstm_cell(gates, c);
        (g.slice_cols(hc, 0, size), g.slice_cols(hc, size, size))
    }

    /// Runs the encoder stack layer by layer over all `L` steps.
    pub fn encode_graph(&self, g: &mut Graph, batch: &SequenceBatch) -> Result<EncoderTrace, InterpreterError> {
        self.check_batch(batch)?;
        let b = batch.len();
        let pick: Vec<usize> = batch.valid_lengths.iter().map(|&v| v.clamp(1, batch.l) - 1).collect();
        let mut inputs: Vec<Var> = (0..batch.l).map(|t| g.constant(batch.step(t))).collect();
        let mut final_hidden = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (ids, &size) in self.layers.iter().zip(&self.config.hidden) {
            let w = g.param(ids.enc_w, self.params.get(ids.enc_w));
            let bias = g.param(ids.enc_b, self.params.get(ids.enc_b));
            let mut h = g.constant(Matrix::zeros(b, size));
            let mut c = g.constant(Matrix::zeros(b, size));
            let mut states = Vec::with_capacity(batch.l);
            for &x in &inputs {
                (h, c) = Self::cell(g, w, bias, x, h, c, size);
                states.push(h);
            }
            final_hidden.push(g.select_rows(&states, &pick));
            outputs.push(g.concat_cols(&states));
            inputs = states;
        }
        let latent = g.concat_cols(&final_hidden);
        Ok(EncoderTrace {
            latent,
            final_hidden,
            outputs,
        })
    }

    /// Autoregressive decoding for `L` steps; returns `B × (L·F)`.
    pub fn decode_graph(&self, g: &mut Graph, enc: &EncoderTrace, batch: &SequenceBatch) -> Var {
        let b = batch.len();
        let (l, f, a) = (batch.l, self.config.features, self.config.attention_dim);
        struct Layer {
            w: Var,
            bias: Var,
            wd: Var,
            v: Var,
            keys: Var,
            values: Var,
            h: Var,
            c: Var,
            size: usize,
        }
        let mut layers: Vec<Layer> = self
            .layers
            .iter()
            .zip(&self.config.hidden)
            .enumerate()
            .map(|(i, (ids, &size))| {
                let we = g.param(ids.att_we, self.params.get(ids.att_we));
                let values = enc.outputs[i];
                let flat = g.reshape(values, b * l, size);
                let proj = g.matmul(flat, we);
                let keys = g.reshape(proj, b, l * a);
                Layer {
                    w: g.param(ids.dec_w, self.params.get(ids.dec_w)),
                    bias: g.param(ids.dec_b, self.params.get(ids.dec_b)),
                    wd: g.param(ids.att_wd, self.params.get(ids.att_wd)),
                    v: g.param(ids.att_v, self.params.get(ids.att_v)),
                    keys,
                    values,
                    h: enc.final_hidden[i],
                    c: g.constant(Matrix::zeros(b, size)),
                    size,
                }
            })
            .collect();
        let out_w = g.param(self.out_w, self.params.get(self.out_w));
        let out_b = g.param(self.out_b, self.params.get(self.out_b));
        let mut prev = g.constant(Matrix::zeros(b, f));
        let mut ys = Vec::with_capacity(l);
        for _ in 0..l {
            let mut below = prev;
            for layer in &mut layers {
                let q = g.matmul(layer.h, layer.wd);
                let scores = g.attn_scores(layer.keys, q, layer.v);
                let alpha = g.softmax_rows_prefix(scores, &batch.valid_lengths);
                let ctx = g.attn_context(alpha, layer.values);
                let input = g.concat_cols(&[below, ctx]);
                (layer.h, layer.c) = Self::cell(g, layer.w, layer.bias, input, layer.h, layer.c, layer.size);
                below = layer.h;
            }
            let proj = g.matmul(below, out_w);
            let y = g.add_row(proj, out_b);
            ys.push(y);
            prev = y;
        }
        g.concat_cols(&ys)
    }

    /// Latent representations without gradient bookkeeping.
    pub fn encode(&self, batch: &SequenceBatch) -> Result<LatentBatch, InterpreterError> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, batch)?;
        let h = g.value(enc.latent).clone();
        if !h.is_finite() {
            return Err(InterpreterError::NonFinite("latent representation".into()));
        }
        Ok(LatentBatch {
            h,
            ids: batch.ids.clone(),
        })
    }

    /// Reconstruction `B × (L·F)` of every sequence in the batch.
    pub fn reconstruct(&self, batch: &SequenceBatch) -> Result<Matrix, InterpreterError> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, batch)?;
        let y = self.decode_graph(&mut g, &enc, batch);
        let out = g.value(y).clone();
        if !out.is_finite() {
            return Err(InterpreterError::NonFinite("reconstruction".into()));
        }
        Ok(out)
    }

    /// Writes a checkpoint whose `meta.json` carries the config plus `extra`.
    pub fn save(&self, dir: &Path, extra: Value) -> Result<(), InterpreterError> {
        let meta = serde_json::json!({
            "kind": "interpreter",
            "config": self.config,
            "extra": extra,
        });
        write_checkpoint(dir, &meta, &self.params)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, Value), InterpreterError> {
        let (meta, store) = read_checkpoint(dir)?;
        if meta.get("kind").and_then(Value::as_str) != Some("interpreter") {
            return Err(InterpreterError::Config(format!("{} is not an interpreter checkpoint", dir.display())));
        }
        let config: InterpreterConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| InterpreterError::Config(e.to_string()))?;
        let mut model = Self::new(config, 0)?;
        restore_params(&mut model.params, &store)?;
        Ok((model, meta["extra"].clone()))
    }
}

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bridge::{bridge_loss_node, interpreter_total_node, sign_matrix};
use crate::classifier::{
    build_adjacency, map_frequency, map_sequential, ClassifierConfig, ClassifierModel, Variant,
};
use crate::data::{PaddedDataset, PaddedSample};
use crate::evaluation::adjacency_entropy;
use crate::interpreter::{
    gram, reconstruction_loss_node, trace_loss_node, InterpreterConfig, InterpreterModel, SequenceBatch,
};
use crate::numerics::{kmeans, top_k_eigenvectors, Adam, AdamConfig, ClusterModel, Graph, Matrix, Var};

use super::{sub_seed, FreezeCheck, LossHistory, LossRecord, Phase, PreparedData, RefreshEvent, Stream, TrainError, TrainState, TrainingConfig};

/// Trained networks plus everything recorded on the way.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub interpreter: InterpreterModel,
    pub classifier: ClassifierModel,
    pub cluster_model: ClusterModel,
    pub state: TrainState,
}

/// Per-player cluster ids (`None` for padding) and latent rows.
#[derive(Clone, Debug)]
pub struct ClusteredPlayers {
    pub ids: Vec<Vec<Option<usize>>>,
    /// `S × M` per player, padded rows zeroed.
    pub latents: Vec<Matrix>,
}

pub fn interpreter_config(config: &TrainingConfig, data: &PreparedData) -> InterpreterConfig {
    InterpreterConfig {
        features: data.f,
        hidden: config.hidden_sizes.clone(),
        attention_dim: config.attention_dim,
        reducer_len: data.s,
    }
}

pub fn classifier_config(config: &TrainingConfig, data: &PreparedData, classes: usize) -> ClassifierConfig {
    ClassifierConfig {
        variant: config.variant,
        k: config.k,
        s: data.s,
        latent_dim: config.hidden_sizes.iter().sum(),
        classes,
        conv_channels: config.conv_channels,
        recurrent_hidden: config.classifier_hidden,
    }
}

/// Fresh classifier whose output layer starts at zero, so an untrained
/// classifier predicts the uniform distribution.
pub fn new_classifier(config: ClassifierConfig, seed: u64) -> Result<ClassifierModel, TrainError> {
    let mut model = ClassifierModel::new(config, seed)?;
    for name in ["out.w", "out.b"] {
        let id = model.params.id_of(name).expect("output layer exists");
        model.params.get_mut(id).values_mut().fill(0.0);
    }
    Ok(model)
}

/// Partitions the training players into fixed interpreter batches of
/// `players_per_batch`. A trailing batch too small to hold K sequences is
/// merged into its predecessor.
fn make_batches(n: usize, config: &TrainingConfig, s: usize) -> Result<Vec<Vec<usize>>, TrainError> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(config.seed, Stream::BatchPartition)));
    let mut batches: Vec<Vec<usize>> = order.chunks(config.players_per_batch).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() * s < config.k) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("has predecessor").extend(tail);
    }
    if let Some(b) = batches.iter().find(|b| b.len() * s < config.k) {
        return Err(TrainError::Config(format!(
            "K={} exceeds the {} sequences of an interpreter batch",
            config.k,
            b.len() * s
        )));
    }
    Ok(batches)
}

fn batch_for(ds: &PaddedDataset, players: &[usize]) -> SequenceBatch {
    let samples: Vec<&PaddedSample> = players.iter().map(|&i| &ds.samples[i]).collect();
    SequenceBatch::from_players(&samples, players, ds.l, ds.f)
}

/// `rows × width` mask: 1 for real sequences, 0 for padding.
fn real_mask(batch: &SequenceBatch, width: usize) -> Matrix {
    let mut m = Matrix::zeros(batch.len(), width);
    for (r, &v) in batch.valid_lengths.iter().enumerate() {
        if v > 0 {
            m.row_mut(r).fill(1.0);
        }
    }
    m
}

/// Sign ids for a player: padding positions get ids no real cluster uses.
fn sign_ids(ids: &[Option<usize>]) -> Vec<usize> {
    ids.iter()
        .enumerate()
        .map(|(pos, c)| c.unwrap_or(usize::MAX - pos))
        .collect()
}

fn finite(v: f64, what: &str) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite(what.to_string()))
    }
}

/// Losses of one interpreter step.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepLosses {
    pub recon: f64,
    pub trace: f64,
    pub bridge: Option<f64>,
    pub total: f64,
}

/// Bridge inputs fixed for one interpreter phase.
struct BridgeTargets<'a> {
    ids: &'a [Vec<Option<usize>>],
    c_relu: &'a Matrix,
}

pub(crate) struct Trainer<'a> {
    pub config: TrainingConfig,
    pub data: &'a PreparedData,
    pub interpreter: InterpreterModel,
    pub classifier: ClassifierModel,
    interp_opt: Adam,
    cls_opt: Adam,
    batches: Vec<Vec<usize>>,
    batch_steps: Vec<usize>,
    batch_rng: ChaCha8Rng,
    cls_rng: ChaCha8Rng,
    pub state: TrainState,
    interp_epochs: usize,
    cls_epochs: usize,
    checkpoint_root: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainingConfig, data: &'a PreparedData, checkpoint_root: Option<&Path>) -> Result<Self, TrainError> {
        config.validate()?;
        let interpreter = InterpreterModel::new(
            interpreter_config(config, data),
            sub_seed(config.seed, Stream::InterpreterInit),
        )?;
        let classifier = new_classifier(
            classifier_config(config, data, data.labels.len()),
            sub_seed(config.seed, Stream::ClassifierInit),
        )?;
        let batches = make_batches(data.train.samples.len(), config, data.s)?;
        let real = data
            .train
            .samples
            .iter()
            .flat_map(|p| &p.sequences)
            .filter(|q| q.is_real())
            .count();
        if real < config.k {
            return Err(TrainError::Config(format!(
                "K={} exceeds the {real} real training sequences",
                config.k
            )));
        }
        let interp_opt = Adam::new(
            &interpreter.params,
            AdamConfig {
                lr: config.lr_interpreter,
                ..AdamConfig::default()
            },
        );
        let cls_opt = Adam::new(
            &classifier.params,
            AdamConfig {
                lr: config.lr_classifier,
                ..AdamConfig::default()
            },
        );
        let n_batches = batches.len();
        Ok(Self {
            config: config.clone(),
            data,
            interpreter,
            classifier,
            interp_opt,
            cls_opt,
            batch_steps: vec![0; n_batches],
            batches,
            batch_rng: ChaCha8Rng::seed_from_u64(sub_seed(config.seed, Stream::BatchOrder)),
            cls_rng: ChaCha8Rng::seed_from_u64(sub_seed(config.seed, Stream::ClassifierOrder)),
            state: TrainState {
                indicators: vec![None; n_batches],
                seed: config.seed,
                ..TrainState::default()
            },
            interp_epochs: 0,
            cls_epochs: 0,
            checkpoint_root: checkpoint_root.map(Path::to_path_buf),
            last_checkpoint: None,
        })
    }

    fn diverged(&self, phase: Phase, what: String) -> TrainError {
        TrainError::Divergence {
            epoch: self.state.collaborative_epoch + 1,
            phase: phase.as_str().to_string(),
            detail: what,
            last_checkpoint: self.last_checkpoint.clone(),
        }
    }

    /// One gradient step on interpreter batch `b`.
    fn interpreter_step(&mut self, b: usize, bridge: Option<&BridgeTargets>) -> Result<StepLosses, TrainError> {
        let cfg = self.config.clone();
        let players = self.batches[b].clone();
        let batch = batch_for(&self.data.train, &players);
        let m = self.interpreter.latent_dim();
        let mut g = Graph::new();
        let enc = self.interpreter.encode_graph(&mut g, &batch)?;
        let mask = g.constant(real_mask(&batch, m));
        let h = g.mul(enc.latent, mask);

        let steps = self.batch_steps[b];
        if self.state.indicators[b].is_none() || steps.is_multiple_of(cfg.refresh_period) {
            let hv = g.value(h);
            if !hv.is_finite() {
                return Err(TrainError::NonFinite("latent representation".into()));
            }
            self.state.indicators[b] = Some(top_k_eigenvectors(&gram(hv), cfg.k)?);
            self.state.refresh_log.push(RefreshEvent {
                iteration: self.state.interpreter_iterations,
                batch: b,
                batch_iteration: steps,
            });
        }
        let f_ind = self.state.indicators[b].as_ref().expect("refreshed above");

        let y = self.interpreter.decode_graph(&mut g, &enc, &batch);
        let recon = reconstruction_loss_node(&mut g, y, &batch);
        let trace = trace_loss_node(&mut g, h, f_ind)?;
        let bridge_node: Option<Var> = bridge.map(|t| {
            let s = self.data.s;
            let mut signs = Matrix::zeros(players.len() * s, s);
            let mut c = Matrix::zeros(players.len(), s);
            for (i, &p) in players.iter().enumerate() {
                let sm = sign_matrix(&sign_ids(&t.ids[p]));
                for r in 0..s {
                    signs.row_mut(i * s + r).copy_from_slice(sm.row(r));
                }
                c.row_mut(i).copy_from_slice(t.c_relu.row(p));
            }
            let rid = self.interpreter.reducer().expect("reducer sized to S");
            let w = g.param(rid, self.interpreter.params.get(rid));
            bridge_loss_node(&mut g, h, s, &signs, w, &c)
        });
        let beta = if bridge_node.is_some() { cfg.beta } else { 1.0 };
        let total = interpreter_total_node(&mut g, recon, trace, bridge_node, beta, cfg.lambda);
        let losses = StepLosses {
            recon: finite(g.scalar(recon), "reconstruction loss")?,
            trace: finite(g.scalar(trace), "trace loss")?,
            bridge: bridge_node.map(|v| g.scalar(v)),
            total: finite(g.scalar(total), "interpreter loss")?,
        };
        let grads = g.backward(total);
        let per_param = self.interpreter.params.grads_by_param(&grads);
        if per_param.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite("interpreter gradient".into()));
        }
        self.interp_opt.step(&mut self.interpreter.params, &per_param);
        self.batch_steps[b] += 1;
        self.state.interpreter_iterations += 1;
        Ok(losses)
    }

    /// `epochs` interpreter epochs; every batch once per epoch in a fresh
    /// random order.
    fn interpreter_phase(&mut self, epochs: usize, bridge: Option<&BridgeTargets>) -> Result<(), TrainError> {
        let before = self.classifier.params.checksum();
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..self.batches.len()).collect();
            order.shuffle(&mut self.batch_rng);
            let mut sums = StepLosses::default();
            let mut weight = 0.0;
            for b in order {
                let l = self
                    .interpreter_step(b, bridge)
                    .map_err(|e| self.diverged(Phase::Interpreter, e.to_string()))?;
                let w = self.batches[b].len() as f64;
                sums.recon += w * l.recon;
                sums.trace += w * l.trace;
                sums.total += w * l.total;
                if let Some(v) = l.bridge {
                    *sums.bridge.get_or_insert(0.0) += w * v;
                }
                weight += w;
            }
            self.interp_epochs += 1;
            let e = self.interp_epochs;
            let h = &mut self.state.history;
            h.push(e, Phase::Interpreter, "reconstruction", sums.recon / weight);
            h.push(e, Phase::Interpreter, "trace", sums.trace / weight);
            if let Some(v) = sums.bridge {
                h.push(e, Phase::Interpreter, "bridge", v / weight);
            }
            h.push(e, Phase::Interpreter, "total", sums.total / weight);
            log::debug!("interpreter epoch {e}: total {:.6}", sums.total / weight);
        }
        self.state.freeze_checks.push(FreezeCheck {
            collaborative_epoch: self.state.collaborative_epoch + 1,
            phase: Phase::Interpreter,
            before,
            after: self.classifier.params.checksum(),
        });
        Ok(())
    }

    /// Latent rows of every sequence in `ds`, grouped per player.
    pub fn encode_players(&self, ds: &PaddedDataset) -> Result<Vec<Matrix>, TrainError> {
        encode_players(&self.interpreter, ds, self.config.players_per_batch)
    }

    /// Fits k-means on the real training latents and assigns ids.
    fn cluster_phase(&mut self) -> Result<ClusteredPlayers, TrainError> {
        let latents = self
            .encode_players(&self.data.train)
            .map_err(|e| self.diverged(Phase::Interpreter, e.to_string()))?;
        let m = self.interpreter.latent_dim();
        let mut rows = Vec::new();
        for (p, lat) in self.data.train.samples.iter().zip(&latents) {
            for (pos, q) in p.sequences.iter().enumerate() {
                if q.is_real() {
                    rows.extend_from_slice(lat.row(pos));
                }
            }
        }
        let n = rows.len() / m;
        let points = Matrix::new(n, m, rows).expect("row-major latent rows");
        let seed = sub_seed(self.config.seed, Stream::KMeans) ^ self.state.collaborative_epoch as u64;
        let fit = kmeans(&points, self.config.k, seed)?;
        let mut next = fit.assignments.iter();
        let ids: Vec<Vec<Option<usize>>> = self
            .data
            .train
            .samples
            .iter()
            .map(|p| {
                p.sequences
                    .iter()
                    .map(|q| q.is_real().then(|| *next.next().expect("one id per real row")))
                    .collect()
            })
            .collect();
        let per_player = ids
            .iter()
            .map(|i| build_adjacency(i, self.config.k).map(|t| adjacency_entropy(&t)))
            .collect::<Result<Vec<f64>, _>>()?;
        let entropy = per_player.iter().sum::<f64>() / ids.len() as f64;
        self.state.entropy_trace.push(entropy);
        self.state.player_entropy.push(per_player);
        let mut sizes = vec![0usize; self.config.k];
        fit.assignments.iter().for_each(|&a| sizes[a] += 1);
        log::debug!("cluster sizes {sizes:?}, mean entropy {entropy:.4}");
        self.state.cluster_model = Some(fit.model);
        Ok(ClusteredPlayers { ids, latents })
    }

    /// Trains the classifier for `epochs` epochs on fixed mapped inputs and
    /// returns the post-phase penultimate activations of every player.
    fn classifier_phase(&mut self, inputs: &Matrix, labels: &[usize], epochs: usize) -> Result<Matrix, TrainError> {
        let before = self.interpreter.params.checksum();
        let n = inputs.rows();
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut self.cls_rng);
            let mut sum = 0.0;
            for chunk in order.chunks(self.config.players_per_batch) {
                let mut x = Matrix::zeros(chunk.len(), inputs.cols());
                for (r, &p) in chunk.iter().enumerate() {
                    x.row_mut(r).copy_from_slice(inputs.row(p));
                }
                let y: Vec<usize> = chunk.iter().map(|&p| labels[p]).collect();
                let mut g = Graph::new();
                let xv = g.constant(x);
                let nodes = self.classifier.forward_graph(&mut g, xv)?;
                let loss = g.cross_entropy(nodes.probabilities, &y);
                let v = g.scalar(loss);
                if !v.is_finite() {
                    return Err(self.diverged(Phase::Classifier, "non-finite cross entropy".into()));
                }
                sum += v * chunk.len() as f64;
                let grads = g.backward(loss);
                let per_param = self.classifier.params.grads_by_param(&grads);
                self.cls_opt.step(&mut self.classifier.params, &per_param);
            }
            self.cls_epochs += 1;
            self.state
                .history
                .push(self.cls_epochs, Phase::Classifier, "cce", sum / n as f64);
        }
        self.state.freeze_checks.push(FreezeCheck {
            collaborative_epoch: self.state.collaborative_epoch + 1,
            phase: Phase::Classifier,
            before,
            after: self.interpreter.params.checksum(),
        });
        let acts = self.classifier.forward(inputs)?;
        if log::log_enabled!(log::Level::Debug) {
            let correct = acts.iter().zip(labels).filter(|(a, &y)| a.predicted() == y).count();
            let peak = acts.iter().flat_map(|a| &a.penultimate).fold(0.0f64, |m, &v| m.max(v));
            log::debug!("classifier train accuracy {correct}/{n}, max penultimate {peak:.3}");
        }
        let s = self.data.s;
        Ok(Matrix::new(n, s, acts.into_iter().flat_map(|a| a.penultimate).collect()).expect("S per player"))
    }

    fn write_checkpoint(&mut self, clustered: &ClusteredPlayers) -> Result<(), TrainError> {
        let Some(root) = &self.checkpoint_root else {
            return Ok(());
        };
        let dir = root.join(format!("epoch_{:02}", self.state.collaborative_epoch));
        let extra = serde_json::json!({
            "collaborative_epoch": self.state.collaborative_epoch,
            "seed": self.config.seed,
        });
        save_bundle(
            &dir,
            &self.interpreter,
            &self.classifier,
            self.state.cluster_model.as_ref().expect("clustered"),
            &clustered.ids,
            extra,
            &self.state.history,
        )?;
        self.last_checkpoint = Some(dir);
        Ok(())
    }

    /// Alternating training for the configured number of collaborative
    /// epochs. The bridge term joins the interpreter objective from the
    /// second epoch on.
    pub fn collaborative(mut self) -> Result<TrainOutput, TrainError> {
        let labels: Vec<usize> = self.data.train.samples.iter().map(|p| p.label).collect();
        let mut previous: Option<(ClusteredPlayers, Matrix)> = None;
        for _ in 0..self.config.collaborative_epochs {
            let targets = previous.as_ref().map(|(c, r)| BridgeTargets {
                ids: &c.ids,
                c_relu: r,
            });
            self.interpreter_phase(self.config.interpreter_inner_epochs, targets.as_ref())?;
            let clustered = self.cluster_phase()?;
            let inputs = map_inputs(self.config.variant, self.config.k, &clustered)?;
            let c_relu = self.classifier_phase(&inputs, &labels, self.config.classifier_inner_epochs)?;
            self.state.collaborative_epoch += 1;
            self.write_checkpoint(&clustered)?;
            previous = Some((clustered, c_relu));
        }
        Ok(self.finish())
    }

    /// Disconnected baseline: the interpreter trains on reconstruction and
    /// trace only for as many epochs as the full run, is frozen, clustered
    /// once, and the classifier is trained twice from the same
    /// initialization. Both classifier trajectories are recorded.
    pub fn ablation(mut self) -> Result<TrainOutput, TrainError> {
        let labels: Vec<usize> = self.data.train.samples.iter().map(|p| p.label).collect();
        let epochs = self.config.collaborative_epochs * self.config.interpreter_inner_epochs;
        self.interpreter_phase(epochs, None)?;
        let clustered = self.cluster_phase()?;
        let inputs = map_inputs(self.config.variant, self.config.k, &clustered)?;
        let init = self.classifier.clone();
        let opt = self.cls_opt.clone();
        let rng = self.cls_rng.clone();
        for _ in 0..2 {
            self.classifier = init.clone();
            self.cls_opt = opt.clone();
            self.cls_rng = rng.clone();
            self.classifier_phase(&inputs, &labels, self.config.classifier_inner_epochs)?;
        }
        self.state.collaborative_epoch = 1;
        self.write_checkpoint(&clustered)?;
        Ok(self.finish())
    }

    fn finish(self) -> TrainOutput {
        TrainOutput {
            cluster_model: self.state.cluster_model.clone().expect("at least one cluster phase"),
            interpreter: self.interpreter,
            classifier: self.classifier,
            state: self.state,
        }
    }
}

/// Latent rows of every sequence in `ds`, one `S × M` matrix per player,
/// padded rows zeroed.
pub fn encode_players(
    interpreter: &InterpreterModel,
    ds: &PaddedDataset,
    players_per_batch: usize,
) -> Result<Vec<Matrix>, TrainError> {
    let m = interpreter.latent_dim();
    let idx: Vec<usize> = (0..ds.samples.len()).collect();
    let mut out = Vec::with_capacity(ds.samples.len());
    for chunk in idx.chunks(players_per_batch.max(1)) {
        let batch = batch_for(ds, chunk);
        let h = interpreter.encode(&batch)?.h;
        for (i, &p) in chunk.iter().enumerate() {
            let s = ds.samples[p].sequences.len();
            let mut lat = Matrix::zeros(s, m);
            for pos in 0..s {
                if ds.samples[p].sequences[pos].is_real() {
                    lat.row_mut(pos).copy_from_slice(h.row(i * s + pos));
                }
            }
            out.push(lat);
        }
    }
    Ok(out)
}

/// Assigns every real sequence to its nearest centroid.
pub fn assign_players(
    model: &ClusterModel,
    ds: &PaddedDataset,
    latents: Vec<Matrix>,
) -> ClusteredPlayers {
    let ids = ds
        .samples
        .iter()
        .zip(&latents)
        .map(|(p, lat)| {
            p.sequences
                .iter()
                .enumerate()
                .map(|(pos, q)| q.is_real().then(|| model.assign(lat.row(pos))))
                .collect()
        })
        .collect();
    ClusteredPlayers { ids, latents }
}

/// Classifier input rows for every player.
pub fn map_inputs(variant: Variant, k: usize, clustered: &ClusteredPlayers) -> Result<Matrix, TrainError> {
    let rows: Vec<Vec<f64>> = clustered
        .ids
        .iter()
        .zip(&clustered.latents)
        .map(|(ids, lat)| -> Result<Vec<f64>, TrainError> {
            Ok(match variant {
                Variant::TransitionMatrix => build_adjacency(ids, k)?.normalized.into_vec(),
                Variant::Sequential => {
                    let real: Vec<bool> = ids.iter().map(Option::is_some).collect();
                    map_sequential(lat, &real).into_vec()
                }
                Variant::Frequency => map_frequency(ids, k)?,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Matrix::from_rows(&rows))
}

/// Writes interpreter, classifier and cluster state under `dir`.
/// Writes both networks, the cluster model and the training ids under
/// `dir`. Each network's meta carries `extra` plus its own loss history.
pub fn save_bundle(
    dir: &Path,
    interpreter: &InterpreterModel,
    classifier: &ClassifierModel,
    clusters: &ClusterModel,
    ids: &[Vec<Option<usize>>],
    extra: serde_json::Value,
    history: &LossHistory,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    let with_history = |phase: Phase| {
        let mut meta = extra.clone();
        let records: Vec<&LossRecord> = history.records().iter().filter(|r| r.phase == phase).collect();
        if let serde_json::Value::Object(m) = &mut meta {
            m.insert("loss_history".into(), serde_json::json!(records));
        }
        meta
    };
    interpreter.save(&dir.join("interpreter"), with_history(Phase::Interpreter))?;
    classifier.save(&dir.join("classifier"), with_history(Phase::Classifier))?;
    let clusters_json = serde_json::json!({ "model": clusters, "train_ids": ids });
    let tmp = dir.join(".clusters.json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(&clusters_json)? + "\n")?;
    std::fs::rename(tmp, dir.join("clusters.json"))?;
    Ok(())
}

pub fn collaborative_train(
    data: &PreparedData,
    config: &TrainingConfig,
    checkpoint_root: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    Trainer::new(config, data, checkpoint_root)?.collaborative()
}

pub fn run_ablation(
    data: &PreparedData,
    config: &TrainingConfig,
    checkpoint_root: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    Trainer::new(config, data, checkpoint_root)?.ablation()
}

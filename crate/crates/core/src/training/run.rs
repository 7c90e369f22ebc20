use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::data::{Dataset, FeatureSchema, PaddedDataset};
use crate::evaluation::{entropy_trace_csv, export_embeddings, player_entropy_csv, precision_recall, EmbeddingRow, MetricsReport};
use crate::interpreter::InterpreterModel;
use crate::numerics::ClusterModel;

use super::{
    assign_players, collaborative_train, encode_players, map_inputs, prepare, run_ablation, save_bundle,
    ClusteredPlayers, PreparedData, TrainError, TrainOutput, TrainingConfig,
};

/// Predictions of a trained pipeline on one split.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<usize>,
    pub clustered: ClusteredPlayers,
}

/// Encodes, clusters by nearest centroid, maps and classifies every player
/// of `ds`.
pub fn evaluate_split(
    ds: &PaddedDataset,
    labels: &[String],
    interpreter: &InterpreterModel,
    classifier: &ClassifierModel,
    clusters: &ClusterModel,
    config: &TrainingConfig,
) -> Result<Evaluation, TrainError> {
    let latents = encode_players(interpreter, ds, config.players_per_batch)?;
    let clustered = assign_players(clusters, ds, latents);
    let inputs = map_inputs(config.variant, config.k, &clustered)?;
    let predictions: Vec<usize> = classifier.forward(&inputs)?.iter().map(|a| a.predicted()).collect();
    let truth: Vec<usize> = ds.samples.iter().map(|p| p.label).collect();
    let mut report = precision_recall(&predictions, &truth, labels)?;
    report.config_hash = config.hash();
    report.seed = config.seed;
    Ok(Evaluation {
        report,
        predictions,
        clustered,
    })
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub prepared: PreparedData,
    pub output: TrainOutput,
    /// Metrics on the held-out split, or on the training split when the
    /// test fraction is zero.
    pub evaluation: Evaluation,
}

/// Run-level metadata stored beside the final checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainingConfig,
    pub ablation: bool,
    pub preparation: super::PreparationRecord,
}

pub const FINAL_DIR: &str = "final";
pub const RUN_RECORD: &str = "run.json";

fn embedding_rows(ds: &PaddedDataset, clustered: &ClusteredPlayers) -> Vec<EmbeddingRow> {
    let mut rows = Vec::new();
    for ((p, ids), lat) in ds.samples.iter().zip(&clustered.ids).zip(&clustered.latents) {
        for (pos, id) in ids.iter().enumerate() {
            if let Some(c) = id {
                rows.push(EmbeddingRow {
                    player_id: p.player_id.clone(),
                    seq_index: pos,
                    cluster_id: *c,
                    h: lat.row(pos).to_vec(),
                });
            }
        }
    }
    rows
}

/// Prepares data, trains (collaboratively or as the disconnected
/// ablation), evaluates, and when `out_dir` is given writes checkpoints,
/// loss and entropy histories, metrics and training embeddings into it.
pub fn run_pipeline(
    dataset: &Dataset,
    schema: &FeatureSchema,
    config: &TrainingConfig,
    out_dir: Option<&Path>,
    ablation: bool,
) -> Result<RunResult, TrainError> {
    let prepared = prepare(dataset, schema, config)?;
    let ckpt = out_dir.map(|d| d.join("checkpoints"));
    let output = if ablation {
        run_ablation(&prepared, config, ckpt.as_deref())?
    } else {
        collaborative_train(&prepared, config, ckpt.as_deref())?
    };
    let split = if prepared.test.samples.is_empty() {
        &prepared.train
    } else {
        &prepared.test
    };
    let evaluation = evaluate_split(
        split,
        &schema.labels,
        &output.interpreter,
        &output.classifier,
        &output.cluster_model,
        config,
    )?;
    if let Some(dir) = out_dir {
        let train_latents = encode_players(&output.interpreter, &prepared.train, config.players_per_batch)?;
        let train_clusters = assign_players(&output.cluster_model, &prepared.train, train_latents);
        save_bundle(
            &dir.join(FINAL_DIR),
            &output.interpreter,
            &output.classifier,
            &output.cluster_model,
            &train_clusters.ids,
            serde_json::json!({ "collaborative_epoch": output.state.collaborative_epoch, "seed": config.seed }),
            &output.state.history,
        )?;
        let record = RunRecord {
            config: config.clone(),
            ablation,
            preparation: prepared.record(),
        };
        std::fs::write(dir.join(FINAL_DIR).join(RUN_RECORD), serde_json::to_string_pretty(&record)? + "\n")?;
        std::fs::write(dir.join("config.txt"), config.to_text())?;
        std::fs::write(dir.join("losses.csv"), output.state.history.to_csv())?;
        std::fs::write(dir.join("entropy.csv"), entropy_trace_csv(&output.state.entropy_trace))?;
        let player_ids: Vec<String> = prepared.train.samples.iter().map(|p| p.player_id.clone()).collect();
        std::fs::write(
            dir.join("entropy_players.csv"),
            player_entropy_csv(&player_ids, &output.state.player_entropy),
        )?;
        let diagnostics = serde_json::json!({
            "refresh_log": output.state.refresh_log,
            "freeze_checks": output.state.freeze_checks,
            "interpreter_iterations": output.state.interpreter_iterations,
        });
        std::fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&diagnostics)? + "\n")?;
        export_embeddings(&embedding_rows(&prepared.train, &train_clusters), &dir.join("embeddings.csv"))?;
        // Written last: its presence marks a completed run.
        evaluation.report.write(dir)?;
    }
    Ok(RunResult {
        prepared,
        output,
        evaluation,
    })
}

/// A run reloaded from its final checkpoint.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub record: RunRecord,
    pub prepared: PreparedData,
    pub interpreter: InterpreterModel,
    pub classifier: ClassifierModel,
    pub clusters: ClusterModel,
}

pub fn load_run(run_dir: &Path, dataset: &Dataset) -> Result<LoadedRun, TrainError> {
    let fin = run_dir.join(FINAL_DIR);
    let record: RunRecord = serde_json::from_str(&std::fs::read_to_string(fin.join(RUN_RECORD))?)?;
    let prepared = PreparedData::from_record(dataset, &record.preparation)?;
    let (interpreter, _) = InterpreterModel::load(&fin.join("interpreter"))?;
    let (classifier, _) = ClassifierModel::load(&fin.join("classifier"))?;
    let clusters_json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fin.join("clusters.json"))?)?;
    let clusters: ClusterModel = serde_json::from_value(clusters_json["model"].clone())?;
    Ok(LoadedRun {
        record,
        prepared,
        interpreter,
        classifier,
        clusters,
    })
}

impl LoadedRun {
    /// Re-evaluates the held-out split (training split when there is none).
    pub fn evaluate(&self) -> Result<Evaluation, TrainError> {
        let split = if self.prepared.test.samples.is_empty() {
            &self.prepared.train
        } else {
            &self.prepared.test
        };
        evaluate_split(
            split,
            &self.prepared.labels,
            &self.interpreter,
            &self.classifier,
            &self.clusters,
            &self.record.config,
        )
    }

    /// Latents and nearest-centroid ids of the training or test split.
    pub fn clustered(&self, test_split: bool) -> Result<ClusteredPlayers, TrainError> {
        let ds = if test_split { &self.prepared.test } else { &self.prepared.train };
        let latents = encode_players(&self.interpreter, ds, self.record.config.players_per_batch)?;
        Ok(assign_players(&self.clusters, ds, latents))
    }

    /// Latent rows and nearest-centroid ids for the given split.
    pub fn embeddings(&self, test_split: bool) -> Result<Vec<EmbeddingRow>, TrainError> {
        let ds = if test_split { &self.prepared.test } else { &self.prepared.train };
        Ok(embedding_rows(ds, &self.clustered(test_split)?))
    }
}

use serde::{Deserialize, Serialize};

use crate::numerics::{ClusterIndicator, ClusterModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Interpreter,
    Classifier,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Interpreter => "interpreter",
            Phase::Classifier => "classifier",
        }
    }
}

/// One recorded loss value. `epoch` counts inner epochs of the given
/// network from 1, continuing across collaborative epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub loss_name: String,
    pub value: f64,
}

/// Append-only loss log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn push(&mut self, epoch: usize, phase: Phase, loss_name: &str, value: f64) {
        self.records.push(LossRecord {
            epoch,
            phase,
            loss_name: loss_name.to_string(),
            value,
        });
    }

    pub fn records(&self) -> &[LossRecord] {
        &self.records
    }

    /// Values of one series in recording order.
    pub fn series(&self, phase: Phase, loss_name: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.phase == phase && r.loss_name == loss_name)
            .map(|r| r.value)
            .collect()
    }

    /// `epoch,phase,loss_name,value`, values with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,loss_name,value\n");
        for r in &self.records {
            out += &format!("{},{},{},{:.16e}\n", r.epoch, r.phase.as_str(), r.loss_name, r.value);
        }
        out
    }
}

/// A cluster-indicator recomputation for one interpreter batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshEvent {
    /// Global interpreter iteration (gradient step) index, from 0.
    pub iteration: usize,
    pub batch: usize,
    /// Steps this batch had taken before the refresh.
    pub batch_iteration: usize,
}

/// Checksums of the network that must stay frozen during a phase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeCheck {
    pub collaborative_epoch: usize,
    pub phase: Phase,
    pub before: u64,
    pub after: u64,
}

impl FreezeCheck {
    pub fn held(&self) -> bool {
        self.before == self.after
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainState {
    /// Completed collaborative epochs.
    pub collaborative_epoch: usize,
    pub history: LossHistory,
    /// Mean training-player adjacency entropy after each cluster phase.
    pub entropy_trace: Vec<f64>,
    /// Per-player entropies behind each `entropy_trace` entry, in
    /// training-split order.
    pub player_entropy: Vec<Vec<f64>>,
    pub refresh_log: Vec<RefreshEvent>,
    pub freeze_checks: Vec<FreezeCheck>,
    /// One indicator per interpreter batch, as last refreshed.
    pub indicators: Vec<Option<ClusterIndicator>>,
    pub cluster_model: Option<ClusterModel>,
    pub interpreter_iterations: usize,
    pub seed: u64,
}

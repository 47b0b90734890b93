//! Training loops: self-supervised pre-training and LOSO fine-tuning.

mod finetune;
mod pretrain;
pub mod scheduler;

pub use finetune::{
    finetune, make_loso_folds, predict_series, FinetuneConfig, FoldAssignment, FoldPlan, InitMode,
};
pub use pretrain::{pretrain, PretrainConfig};
pub use scheduler::PlateauCosine;

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use crate::ingest::SignalWindow;

/// One line of the per-epoch training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Epoch history plus the untrained (epoch-0) validation loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_val: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

impl TrainLog {
    /// Serialize as line-delimited JSON records.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(
            &serde_json::to_string(&serde_json::json!({
                "epoch": 0, "val_loss": self.initial_val
            }))
            .unwrap(),
        );
        out.push('\n');
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Stack windows into a (B, 4, L) f64 batch tensor.
pub(crate) fn windows_to_tensor(windows: &[&SignalWindow]) -> Array3<f64> {
    let b = windows.len();
    let (c, l) = windows[0].data.dim();
    Array3::from_shape_fn((b, c, l), |(i, ci, t)| windows[i].data[[ci, t]] as f64)
}

/// Labels of a batch; every window must carry one.
pub(crate) fn labels_to_array(windows: &[&SignalWindow]) -> Option<Array1<f64>> {
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        out.push(w.label?);
    }
    Some(Array1::from_vec(out))
}

//! LOSO fine-tuning of the estimator.
//!
//! Subjects are split into four folds. For every test subject, the three
//! other folds train the model, the test subject's fold-mates validate it,
//! and the subject itself is held out entirely — so each subject yields one
//! test MAE row and no window of the test subject ever reaches a training
//! batch (asserted at batch assembly).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::HRSeries;
use crate::ingest::{Provenance, SignalWindow, WindowedDataset};
use crate::model::{
    mae_loss, mae_loss_grad, transfer_encoder_weights, Checkpoint, CheckpointMeta, Estimator,
    ModelConfig, Variant,
};
use crate::nn::Adam;
use crate::util::{rng_for, shuffle};

use super::{labels_to_array, windows_to_tensor, EpochRecord, TrainLog};

/// Weight initialization mode for fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Pretrained,
    Random,
}

/// Fine-tuning recipe. Defaults: 500 epochs of Adam at 5e-4, MAE objective,
/// early stopping with patience 150.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub max_epochs: usize,
    #[serde(rename = "learning_rate", alias = "lr")]
    pub lr: f64,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: InitMode,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            max_epochs: 500,
            lr: 5e-4,
            early_stop_patience: 150,
            batch_size: 128,
            seed: 0,
            init: InitMode::Pretrained,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.early_stop_patience >= self.max_epochs {
            return Err(Error::config(format!(
                "patience ({}) must be below max_epochs ({})",
                self.early_stop_patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}

/// One LOSO assignment: train on three folds, validate on the test subject's
/// fold-mates, test on the subject itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold: usize,
    pub test_subject: String,
    pub val_subjects: Vec<String>,
    pub train_subjects: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<String>>,
    pub assignments: Vec<FoldAssignment>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("fold plan: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let plan: FoldPlan =
            serde_json::from_str(&text).map_err(|e| Error::format(format!("fold plan: {e}")))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for fold in &self.folds {
            for s in fold {
                if !seen.insert(s.clone()) {
                    return Err(Error::format(format!("subject {s} appears in two folds")));
                }
            }
        }
        let mut tested = BTreeSet::new();
        for a in &self.assignments {
            if !tested.insert(a.test_subject.clone()) {
                return Err(Error::format(format!(
                    "subject {} tested more than once",
                    a.test_subject
                )));
            }
            for v in &a.val_subjects {
                if *v == a.test_subject || a.train_subjects.contains(v) {
                    return Err(Error::format("overlapping train/val/test sets".to_string()));
                }
            }
            if a.train_subjects.contains(&a.test_subject) {
                return Err(Error::format("test subject leaked into training".to_string()));
            }
        }
        if tested != seen {
            return Err(Error::format("not every subject is tested exactly once".to_string()));
        }
        Ok(())
    }
}

/// Deterministically partition subjects into `n_folds` folds (sizes as equal
/// as possible) and derive the per-subject assignments.
pub fn make_loso_folds(subject_ids: &[String], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if subject_ids.len() < n_folds || n_folds < 2 {
        return Err(Error::argument(format!(
            "need at least {n_folds} subjects for {n_folds} folds, got {}",
            subject_ids.len()
        )));
    }
    let unique: BTreeSet<_> = subject_ids.iter().collect();
    if unique.len() != subject_ids.len() {
        return Err(Error::argument("duplicate subject ids"));
    }

    let mut ids = subject_ids.to_vec();
    let mut rng = rng_for(seed, "loso.folds");
    shuffle(&mut ids, &mut rng);

    let base = ids.len() / n_folds;
    let remainder = ids.len() % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0usize;
    for f in 0..n_folds {
        let size = base + usize::from(f < remainder);
        folds.push(ids[start..start + size].to_vec());
        start += size;
    }

    let mut assignments = Vec::with_capacity(ids.len());
    for (fi, fold) in folds.iter().enumerate() {
        let train: Vec<String> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fi)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        for subject in fold {
            assignments.push(FoldAssignment {
                fold: fi,
                test_subject: subject.clone(),
                val_subjects: fold.iter().filter(|s| *s != subject).cloned().collect(),
                train_subjects: train.clone(),
            });
        }
    }

    let plan = FoldPlan { folds, assignments, seed };
    plan.validate()?;
    Ok(plan)
}

fn collect<'d>(
    data: &'d WindowedDataset,
    subjects: &[String],
    need_labels: bool,
) -> Result<Vec<&'d SignalWindow>> {
    let set: BTreeSet<&String> = subjects.iter().collect();
    let windows: Vec<&SignalWindow> = data
        .windows
        .iter()
        .filter(|w| set.contains(&w.subject_id))
        .collect();
    if windows.is_empty() {
        return Err(Error::argument(format!("no windows for subjects {subjects:?}")));
    }
    if need_labels && windows.iter().any(|w| w.label.is_none()) {
        return Err(Error::argument("missing labels on fine-tuning windows"));
    }
    Ok(windows)
}

/// Fine-tune the estimator for one LOSO assignment.
///
/// `data` must already be normalized: with `init = random` using stats from
/// the training split, with `init = pretrained` using the pre-training corpus
/// stats recorded in the checkpoint.
pub fn finetune(
    assignment: &FoldAssignment,
    pretrained: Option<&Checkpoint>,
    cfg: &FinetuneConfig,
    model_cfg: &ModelConfig,
    data: &WindowedDataset,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if !data.normalized {
        return Err(Error::state("fine-tuning data must be normalized"));
    }
    let stats = data
        .stats
        .clone()
        .ok_or_else(|| Error::state("normalized dataset lacks stats"))?;
    match (cfg.init, pretrained) {
        (InitMode::Pretrained, None) => {
            return Err(Error::argument("init = pretrained requires a checkpoint"))
        }
        (InitMode::Pretrained, Some(ckpt)) => {
            if stats.provenance != Provenance::PretrainCorpus {
                return Err(Error::state(
                    "pretrained fine-tuning expects pre-training corpus stats",
                ));
            }
            if let Some(ck_stats) = &ckpt.stats {
                if *ck_stats != stats {
                    return Err(Error::state(
                        "normalization stats differ between data and pre-trained checkpoint",
                    ));
                }
            }
        }
        (InitMode::Random, _) => {
            if stats.provenance != Provenance::TrainSplit {
                return Err(Error::state(
                    "randomly initialized fine-tuning expects training-split stats",
                ));
            }
        }
    }

    let est_cfg = model_cfg.clone().estimator();
    let mut est = match cfg.init {
        InitMode::Pretrained => transfer_encoder_weights(pretrained.unwrap(), &est_cfg, cfg.seed)?,
        InitMode::Random => Estimator::build(&est_cfg, cfg.seed)?,
    };

    let train = collect(data, &assignment.train_subjects, true)?;
    let val = collect(data, &assignment.val_subjects, true)?;

    let eval_mae = |est: &Estimator, windows: &[&SignalWindow]| -> Result<f64> {
        let mut total = 0.0;
        for chunk in windows.chunks(cfg.batch_size) {
            let x = windows_to_tensor(chunk);
            let y = labels_to_array(chunk).ok_or_else(|| Error::argument("missing labels"))?;
            total += mae_loss(&est.forward(&x), &y)? * chunk.len() as f64;
        }
        Ok(total / windows.len() as f64)
    };

    let mut opt = Adam::adam(&est.params, cfg.lr);
    let initial_val = eval_mae(&est, &val)?;
    let mut best_val = initial_val;
    let mut best_epoch = 0usize;
    let mut best_snapshot = est.params.snapshot();
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng_for(cfg.seed, "finetune.shuffle");
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        shuffle(&mut order, &mut shuffle_rng);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SignalWindow> = chunk.iter().map(|&i| train[i]).collect();
            // subject-leakage guard: the held-out subject must never be trained on
            assert!(
                batch.iter().all(|w| w.subject_id != assignment.test_subject),
                "test subject {} leaked into a training batch",
                assignment.test_subject
            );
            let x = windows_to_tensor(&batch);
            let y = labels_to_array(&batch).ok_or_else(|| Error::argument("missing labels"))?;
            est.params.zero_grads();
            let (pred, cache) = est.forward_cached(&x);
            let (loss, d_pred) = mae_loss_grad(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("MAE diverged at epoch {epoch}")));
            }
            est.backward(&cache, &d_pred);
            opt.step(&mut est.params);
            train_loss += loss * batch.len() as f64;
        }
        train_loss /= train.len() as f64;

        let val_loss = eval_mae(&est, &val)?;
        log.push(EpochRecord { epoch, train_loss, val_loss, lr: cfg.lr });
        log::debug!(
            "finetune[{}] epoch {epoch}: train {train_loss:.3} val {val_loss:.3}",
            assignment.test_subject
        );

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_snapshot = est.params.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    est.params.restore(&best_snapshot);
    let ckpt = Checkpoint::from_params(
        &est_cfg,
        CheckpointMeta { epoch: best_epoch, best_val, seed: cfg.seed },
        Some(stats),
        &est.params,
    );
    Ok((
        ckpt,
        TrainLog { initial_val, epochs: log, best_epoch, best_val },
    ))
}

/// One BPM prediction per window, in temporal order.
///
/// The windows must be normalized with the same statistics the checkpoint was
/// trained under; a mismatch is refused.
pub fn predict_series(ckpt: &Checkpoint, subject_windows: &WindowedDataset) -> Result<HRSeries> {
    if ckpt.config.variant != Variant::Estimator {
        return Err(Error::argument("predict_series needs an estimator checkpoint"));
    }
    if !subject_windows.normalized {
        return Err(Error::state("prediction windows must be normalized"));
    }
    match (&ckpt.stats, &subject_windows.stats) {
        (Some(a), Some(b)) if a == b => {}
        (None, _) => {}
        (Some(_), None) => return Err(Error::state("container lacks normalization stats")),
        (Some(a), Some(b)) => {
            return Err(Error::state(format!(
                "normalization stats mismatch: checkpoint {a:?} vs container {b:?}"
            )))
        }
    }
    let subjects = subject_windows.subject_ids();
    if subjects.len() != 1 {
        return Err(Error::argument(format!(
            "predict_series expects one subject, got {subjects:?}"
        )));
    }

    let mut est = Estimator::build(&ckpt.config, ckpt.meta.seed)?;
    ckpt.load_into(&mut est.params)?;

    let mut predictions = Vec::with_capacity(subject_windows.len());
    for chunk in subject_windows.windows.chunks(256) {
        let refs: Vec<&SignalWindow> = chunk.iter().collect();
        let x = windows_to_tensor(&refs);
        let pred = est.forward(&x);
        predictions.extend(pred.column(0).iter().cloned());
    }

    let labels = subject_windows
        .windows
        .iter()
        .map(|w| w.label)
        .collect::<Option<Vec<f64>>>();

    let series = HRSeries { subject_id: subjects[0].clone(), predictions, labels };
    series.validate()?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("S{i}")).collect()
    }

    #[test]
    fn fifteen_subjects_make_4443_folds() {
        let plan = make_loso_folds(&ids(15), 4, 7).unwrap();
        let mut sizes: Vec<usize> = plan.folds.iter().map(|f| f.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 4, 4, 4]);
        assert_eq!(plan.assignments.len(), 15);
        plan.validate().unwrap();
    }

    #[test]
    fn assignments_are_disjoint_and_exhaustive() {
        let plan = make_loso_folds(&ids(15), 4, 3).unwrap();
        for a in &plan.assignments {
            let train: BTreeSet<_> = a.train_subjects.iter().collect();
            let val: BTreeSet<_> = a.val_subjects.iter().collect();
            assert!(!train.contains(&a.test_subject));
            assert!(!val.contains(&a.test_subject));
            assert!(train.is_disjoint(&val));
            assert_eq!(train.len() + val.len() + 1, 15);
        }
    }

    #[test]
    fn plan_is_deterministic_per_seed() {
        let a = make_loso_folds(&ids(15), 4, 5).unwrap();
        let b = make_loso_folds(&ids(15), 4, 5).unwrap();
        let c = make_loso_folds(&ids(15), 4, 6).unwrap();
        assert_eq!(a.folds, b.folds);
        assert_ne!(a.folds, c.folds);
    }

    #[test]
    fn too_few_subjects_is_an_error() {
        assert!(make_loso_folds(&ids(3), 4, 0).is_err());
    }
}

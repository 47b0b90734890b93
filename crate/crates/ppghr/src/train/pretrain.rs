//! Self-supervised pre-training: reconstruction MSE on an augmented corpus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Provenance, WindowedDataset};
use crate::model::{
    mse_multimodal, mse_multimodal_grad, Autoencoder, Checkpoint, CheckpointMeta, ModelConfig,
    Variant,
};
use crate::nn::Adam;
use crate::util::{rng_for, shuffle};

use super::scheduler::PlateauCosine;
use super::{windows_to_tensor, EpochRecord, TrainLog};

/// Pre-training recipe. Defaults: 500 epochs of AdamW at 1e-3 with betas
/// (0.9, 0.95) and weight decay 0.01, cosine decay after a 5-epoch validation
/// plateau, early stopping after 50 epochs without improvement.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub max_epochs: usize,
    #[serde(rename = "learning_rate", alias = "lr")]
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    /// Random window fraction held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            max_epochs: 500,
            lr: 1e-3,
            betas: (0.9, 0.95),
            weight_decay: 0.01,
            plateau_patience: 5,
            early_stop_patience: 50,
            batch_size: 256,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.early_stop_patience <= self.plateau_patience {
            return Err(Error::config(format!(
                "early_stop_patience ({}) must exceed plateau_patience ({})",
                self.early_stop_patience, self.plateau_patience
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(Error::config(format!(
                "val_fraction must lie in (0, 0.5), got {}",
                self.val_fraction
            )));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::config(format!("bad learning rate {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be positive"));
        }
        Ok(())
    }
}

/// Train the autoencoder on a normalized pre-training corpus; returns the
/// best-validation checkpoint and the per-epoch log.
pub fn pretrain(
    corpus: &WindowedDataset,
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
) -> Result<(Checkpoint, TrainLog)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::argument("pre-training corpus is empty"));
    }
    if !corpus.normalized {
        return Err(Error::state("pre-training corpus must be normalized"));
    }
    let stats = corpus
        .stats
        .clone()
        .ok_or_else(|| Error::state("normalized corpus lacks stats"))?;
    if stats.provenance != Provenance::PretrainCorpus {
        return Err(Error::state(
            "pre-training expects stats computed on the pre-training corpus",
        ));
    }
    if model_cfg.variant != Variant::Autoencoder {
        return Err(Error::config("pretrain needs variant = autoencoder"));
    }

    // window-level validation split
    let n = corpus.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut split_rng = rng_for(cfg.seed, "pretrain.split");
    shuffle(&mut indices, &mut split_rng);
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = indices.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut ae = Autoencoder::build(model_cfg, cfg.seed)?;
    let mut opt = Adam::adamw(&ae.params, cfg.lr, cfg.betas, cfg.weight_decay);
    let mut sched = PlateauCosine::new(cfg.lr, cfg.plateau_patience, cfg.max_epochs);

    let eval_mse = |ae: &Autoencoder, idx: &[usize]| -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in idx.chunks(cfg.batch_size) {
            let refs: Vec<_> = chunk.iter().map(|&i| &corpus.windows[i]).collect();
            let x = windows_to_tensor(&refs);
            let recon = ae.forward(&x);
            total += mse_multimodal(&recon, &x)? * refs.len() as f64;
            count += refs.len();
        }
        Ok(total / count as f64)
    };

    let initial_val = eval_mse(&ae, &val_idx)?;
    let mut best_val = initial_val;
    let mut best_epoch = 0usize;
    let mut best_snapshot = ae.params.snapshot();
    let mut since_best = 0usize;
    let mut shuffle_rng = rng_for(cfg.seed, "pretrain.shuffle");
    let mut log = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr_at(epoch);
        opt.set_lr(lr);
        shuffle(&mut train_idx, &mut shuffle_rng);

        let mut train_loss = 0.0;
        let mut seen = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let refs: Vec<_> = chunk.iter().map(|&i| &corpus.windows[i]).collect();
            let x = windows_to_tensor(&refs);
            ae.params.zero_grads();
            let (recon, cache) = ae.forward_cached(&x);
            let (loss, d_recon) = mse_multimodal_grad(&recon, &x)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "reconstruction MSE diverged at epoch {epoch}"
                )));
            }
            ae.backward(&cache, &d_recon);
            opt.step(&mut ae.params);
            train_loss += loss * refs.len() as f64;
            seen += refs.len();
        }
        train_loss /= seen as f64;

        let val_loss = eval_mse(&ae, &val_idx)?;
        log.push(EpochRecord { epoch, train_loss, val_loss, lr });
        log::debug!("pretrain epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:.2e}");
        sched.observe(epoch, val_loss);

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_snapshot = ae.params.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                log::info!("pretrain early stop at epoch {epoch} (best {best_epoch})");
                break;
            }
        }
    }

    ae.params.restore(&best_snapshot);
    let ckpt = Checkpoint::from_params(
        model_cfg,
        CheckpointMeta { epoch: best_epoch, best_val, seed: cfg.seed },
        Some(stats),
        &ae.params,
    );
    Ok((
        ckpt,
        TrainLog { initial_val, epochs: log, best_epoch, best_val },
    ))
}

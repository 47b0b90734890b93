//! Plateau-triggered half-cycle cosine learning-rate decay.
//!
//! The rate holds at its base value while validation loss keeps improving.
//! Once the best value has not been beaten for `plateau_patience` consecutive
//! epochs, the rate follows `base · 0.5 · (1 + cos(π · t / T))` where `t`
//! counts epochs since the plateau and `T` is the number of epochs remaining
//! to the training budget, reaching zero exactly at the final epoch. The
//! decay never resets, even if validation loss improves later.

/// "Improvement" is a strict decrease of the best value (zero delta).
#[derive(Debug, Clone)]
pub struct PlateauCosine {
    base_lr: f64,
    plateau_patience: usize,
    max_epochs: usize,
    best: f64,
    since_improve: usize,
    decay_start: Option<usize>,
}

impl PlateauCosine {
    pub fn new(base_lr: f64, plateau_patience: usize, max_epochs: usize) -> Self {
        PlateauCosine {
            base_lr,
            plateau_patience,
            max_epochs,
            best: f64::INFINITY,
            since_improve: 0,
            decay_start: None,
        }
    }

    /// Learning rate to use for `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay_start {
            None => self.base_lr,
            Some(p) => {
                let horizon = (self.max_epochs.saturating_sub(p)).max(1) as f64;
                let t = (epoch.saturating_sub(p) as f64).min(horizon);
                self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t / horizon).cos())
            }
        }
    }

    /// Record the validation loss observed at the end of `epoch` (1-based;
    /// epoch 0 is the pre-training evaluation). Returns the learning rate for
    /// the following epoch.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_improve = 0;
        } else {
            self.since_improve += 1;
            if self.decay_start.is_none() && self.since_improve >= self.plateau_patience {
                self.decay_start = Some(epoch);
            }
        }
        self.lr_at(epoch + 1)
    }

    pub fn decay_started(&self) -> Option<usize> {
        self.decay_start
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_runs_hold_the_base_rate() {
        let mut s = PlateauCosine::new(1e-3, 5, 100);
        for epoch in 1..=50 {
            let lr = s.observe(epoch, 1.0 / epoch as f64);
            assert_eq!(lr, 1e-3, "epoch {epoch}");
        }
        assert!(s.decay_started().is_none());
    }

    #[test]
    fn cosine_hits_midpoint_and_endpoint() {
        // Stagnate from epoch 6 so the plateau lands exactly at epoch 10.
        let max = 110;
        let mut s = PlateauCosine::new(1e-3, 5, max);
        for epoch in 1..=5 {
            s.observe(epoch, 1.0 - epoch as f64 * 0.01);
        }
        for epoch in 6..=10 {
            s.observe(epoch, 1.0);
        }
        assert_eq!(s.decay_started(), Some(10));
        let horizon = max - 10; // 100 epochs of decay

        let mid = s.lr_at(10 + horizon / 2);
        assert!((mid - 5e-4).abs() < 1e-12, "midpoint lr {mid}");
        let end = s.lr_at(10 + horizon);
        assert!(end.abs() < 1e-12, "endpoint lr {end}");
        // never resets even if val improves later
        s.observe(11, 0.0);
        assert_eq!(s.decay_started(), Some(10));
    }

    #[test]
    fn equal_loss_counts_as_no_improvement() {
        let mut s = PlateauCosine::new(1e-3, 3, 50);
        s.observe(1, 1.0);
        s.observe(2, 1.0);
        s.observe(3, 1.0);
        s.observe(4, 1.0);
        assert_eq!(s.decay_started(), Some(4));
    }
}

//! Adam-family optimizers over a [`ParamStore`].

use ndarray::ArrayD;

use super::param::ParamStore;

/// Adam with optional decoupled weight decay (AdamW when `weight_decay > 0`).
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; 0 for plain Adam.
    pub weight_decay: f64,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(ps: &ParamStore, lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let m = ps.ids().map(|id| ArrayD::zeros(ps.value(id).raw_dim())).collect();
        let v = ps.ids().map(|id| ArrayD::zeros(ps.value(id).raw_dim())).collect();
        Adam { lr, beta1, beta2, eps: 1e-8, weight_decay, step: 0, m, v }
    }

    /// Plain Adam (fine-tuning recipe).
    pub fn adam(ps: &ParamStore, lr: f64) -> Self {
        Self::new(ps, lr, 0.9, 0.999, 0.0)
    }

    /// AdamW with the pre-training recipe's betas.
    pub fn adamw(ps: &ParamStore, lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        Self::new(ps, lr, betas.0, betas.1, weight_decay)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One update step from the currently accumulated gradients.
    pub fn step(&mut self, ps: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, id) in ps.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = ps.grad(id).clone();
            self.m[i].zip_mut_with(&g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            self.v[i].zip_mut_with(&g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let lr = self.lr;
            let eps = self.eps;
            let wd = self.weight_decay;
            let m = &self.m[i];
            let v = &self.v[i];
            let value = ps.value_mut(id);
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .for_each(|w, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *w -= lr * (mhat / (vhat.sqrt() + eps) + wd * *w);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Init;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (w - 3)^2
        let mut ps = ParamStore::new();
        let id = ps.alloc("w", &[1], Init::Zeros);
        let mut opt = Adam::adam(&ps, 0.1);
        for _ in 0..300 {
            ps.zero_grads();
            let w = ps.value(id)[[0]];
            let grad = ndarray::ArrayD::from_elem(ndarray::IxDyn(&[1]), 2.0 * (w - 3.0));
            ps.add_grad(id, &grad);
            opt.step(&mut ps);
        }
        assert!((ps.value(id)[[0]] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn weight_decay_shrinks_weights_without_gradient() {
        let mut ps = ParamStore::new();
        let id = ps.alloc("w", &[1], Init::Ones);
        let mut opt = Adam::adamw(&ps, 1e-2, (0.9, 0.95), 0.1);
        for _ in 0..100 {
            ps.zero_grads();
            opt.step(&mut ps);
        }
        let w = ps.value(id)[[0]];
        assert!(w < 1.0 && w > 0.0, "w = {w}");
    }
}

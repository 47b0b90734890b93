//! HR estimator: encoder latent → flatten → two dense layers → BPM scalar.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::nn::layers::{relu, relu_backward, Linear, LinearCache, ReluCache};
use crate::nn::ParamStore;
use crate::util::rng_for;

use super::encoder::{Encoder, EncoderCache};
use super::{ModelConfig, Variant};

pub struct Estimator {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    fc1: Linear,
    fc2: Linear,
}

pub struct EstimatorCache {
    enc: EncoderCache,
    latent_dim: (usize, usize, usize),
    fc1: LinearCache,
    relu: ReluCache,
    fc2: LinearCache,
}

impl Estimator {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.variant != Variant::Estimator {
            return Err(Error::config("estimator build needs variant = estimator"));
        }
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut enc_rng = rng_for(seed, "init.encoder");
        let encoder = Encoder::new(&mut params, cfg, &mut enc_rng)?;

        let mut head_rng = rng_for(seed, "init.head");
        let flat = cfg.latent_len() * cfg.latent_dim();
        let fc1 = Linear::new(&mut params, "head.fc1", flat, cfg.head_hidden, &mut head_rng);
        let fc2 = Linear::new(&mut params, "head.fc2", cfg.head_hidden, 1, &mut head_rng);

        Ok(Estimator { cfg: cfg.clone(), params, encoder, fc1, fc2 })
    }

    /// Re-initialize only the regression head (used after weight transfer).
    pub fn reinit_head(&mut self, seed: u64) {
        use crate::nn::Init;
        let mut rng = rng_for(seed, "init.head");
        let flat = self.cfg.latent_len() * self.cfg.latent_dim();
        let mut scratch = ParamStore::new();
        let w1 = scratch.alloc("w1", &[self.cfg.head_hidden, flat], Init::FanInUniform { fan_in: flat, rng: &mut rng });
        let _b1 = scratch.alloc("b1", &[self.cfg.head_hidden], Init::Zeros);
        let w2 = scratch.alloc(
            "w2",
            &[1, self.cfg.head_hidden],
            Init::FanInUniform { fan_in: self.cfg.head_hidden, rng: &mut rng },
        );
        self.params.value_mut(self.fc1.w).assign(scratch.value(w1));
        self.params.value_mut(self.fc1.b).fill(0.0);
        self.params.value_mut(self.fc2.w).assign(scratch.value(w2));
        self.params.value_mut(self.fc2.b).fill(0.0);
    }

    /// Latent sequence (B, S, C) of the encoder alone.
    pub fn encoder_latent(&self, x: &Array3<f64>) -> Array3<f64> {
        let (out, _) = self.encoder.forward(&self.params, x);
        out.latent
    }

    /// Inference: (B, 4, L) → (B, 1) BPM predictions.
    pub fn forward(&self, x: &Array3<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array3<f64>) -> (Array2<f64>, EstimatorCache) {
        let ps = &self.params;
        let (enc_out, enc_cache) = self.encoder.forward(ps, x);
        let (b, s, c) = enc_out.latent.dim();
        let flat = enc_out.latent.to_shape((b, s * c)).unwrap().to_owned();
        let (h1, fc1_cache) = self.fc1.forward(ps, &flat);
        let (a1, relu_cache) = relu(&h1);
        let (pred, fc2_cache) = self.fc2.forward(ps, &a1);
        (
            pred,
            EstimatorCache {
                enc: enc_cache,
                latent_dim: (b, s, c),
                fc1: fc1_cache,
                relu: relu_cache,
                fc2: fc2_cache,
            },
        )
    }

    /// Accumulate gradients for `d_pred` (B, 1); returns the input gradient.
    pub fn backward(&mut self, cache: &EstimatorCache, d_pred: &Array2<f64>) -> Array3<f64> {
        let Estimator { params, encoder, fc1, fc2, .. } = self;
        let d_a1 = fc2.backward(params, &cache.fc2, d_pred);
        let d_h1 = relu_backward(&cache.relu, &d_a1);
        let d_flat = fc1.backward(params, &cache.fc1, &d_h1);
        let (b, s, c) = cache.latent_dim;
        let d_latent = d_flat.into_shape_with_order((b, s, c)).unwrap();
        encoder.backward(params, &cache.enc, &d_latent, None, None)
    }
}

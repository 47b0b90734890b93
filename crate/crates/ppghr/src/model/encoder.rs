//! Shared encoder: two parallel conv stems fused by cross-attention.
//!
//! The PPG channel and the three accelerometer channels run through separate
//! stems (unshared weights) of three conv blocks with increasing channels,
//! each block average-pooled by 2. The pooled feature maps meet in a
//! multi-head cross-attention where PPG features are the queries and
//! accelerometer features the keys/values; the attention output is
//! layer-normalized into the latent sequence. The estimator's head and the
//! autoencoder's decoder both consume that latent.

use ndarray::{s, Array3};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::layers::{
    channels_to_seq, relu, relu_backward, seq_to_channels, AvgPool1d, Conv1d, Conv1dCache,
    LayerNorm, LayerNormCache, MultiHeadAttention, AttentionCache, ReluCache,
};
use crate::nn::ParamStore;

use super::ModelConfig;

/// `layers_per_block` convolutions, each followed by a ReLU.
pub struct ConvBlock {
    convs: Vec<Conv1d>,
}

pub struct ConvBlockCache {
    convs: Vec<(Conv1dCache, ReluCache)>,
}

impl ConvBlock {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (k, dil) = cfg.conv_geometry();
        let mut convs = Vec::with_capacity(cfg.layers_per_block);
        for i in 0..cfg.layers_per_block {
            let ci = if i == 0 { c_in } else { c_out };
            convs.push(Conv1d::new(ps, &format!("{name}.conv{}", i + 1), ci, c_out, k, dil, rng));
        }
        ConvBlock { convs }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array3<f64>) -> (Array3<f64>, ConvBlockCache) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (y, c_cache) = conv.forward(ps, &h);
            let (a, r_cache) = relu(&y);
            caches.push((c_cache, r_cache));
            h = a;
        }
        (h, ConvBlockCache { convs: caches })
    }

    pub fn backward(&self, ps: &mut ParamStore, cache: &ConvBlockCache, dy: &Array3<f64>) -> Array3<f64> {
        let mut d = dy.clone();
        for (conv, (c_cache, r_cache)) in self.convs.iter().zip(&cache.convs).rev() {
            let d_pre = relu_backward(r_cache, &d);
            d = conv.backward(ps, c_cache, &d_pre);
        }
        d
    }
}

/// Three pooled conv blocks; exposes the pre-pool activations of blocks 1–2
/// as skip tensors for the decoder.
pub struct Stem {
    blocks: Vec<ConvBlock>,
    pool: AvgPool1d,
}

pub struct StemCache {
    blocks: Vec<ConvBlockCache>,
}

/// Pre-pool activations of the first two blocks, shallowest first.
pub struct SkipPair {
    pub s1: Array3<f64>,
    pub s2: Array3<f64>,
}

impl Stem {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3] = cfg.block_channels;
        let blocks = vec![
            ConvBlock::new(ps, &format!("{name}.b1"), c_in, c1, cfg, rng),
            ConvBlock::new(ps, &format!("{name}.b2"), c1, c2, cfg, rng),
            ConvBlock::new(ps, &format!("{name}.b3"), c2, c3, cfg, rng),
        ];
        Stem { blocks, pool: AvgPool1d { factor: cfg.pool_factor } }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array3<f64>) -> (Array3<f64>, SkipPair, StemCache) {
        let (a1, c1) = self.blocks[0].forward(ps, x);
        let p1 = self.pool.forward(&a1);
        let (a2, c2) = self.blocks[1].forward(ps, &p1);
        let p2 = self.pool.forward(&a2);
        let (a3, c3) = self.blocks[2].forward(ps, &p2);
        let p3 = self.pool.forward(&a3);
        (
            p3,
            SkipPair { s1: a1, s2: a2 },
            StemCache { blocks: vec![c1, c2, c3] },
        )
    }

    /// `d_skips` injects decoder gradients into the pre-pool activations.
    pub fn backward(
        &self,
        ps: &mut ParamStore,
        cache: &StemCache,
        d_out: &Array3<f64>,
        d_skips: Option<&SkipPair>,
    ) -> Array3<f64> {
        let d_a3 = self.pool.backward(d_out);
        let d_p2 = self.blocks[2].backward(ps, &cache.blocks[2], &d_a3);
        let mut d_a2 = self.pool.backward(&d_p2);
        if let Some(sk) = d_skips {
            d_a2 += &sk.s2;
        }
        let d_p1 = self.blocks[1].backward(ps, &cache.blocks[1], &d_a2);
        let mut d_a1 = self.pool.backward(&d_p1);
        if let Some(sk) = d_skips {
            d_a1 += &sk.s1;
        }
        self.blocks[0].backward(ps, &cache.blocks[0], &d_a1)
    }
}

/// The full encoder: PPG stem, ACC stem, cross-attention fusion, layer norm.
pub struct Encoder {
    pub ppg: Stem,
    pub acc: Stem,
    pub mhca: MultiHeadAttention,
    pub ln: LayerNorm,
}

pub struct EncoderCache {
    ppg: StemCache,
    acc: StemCache,
    attn: AttentionCache,
    ln: LayerNormCache,
}

/// Everything the decoder needs from the encoder pass.
pub struct EncoderOutput {
    /// Latent sequence, (B, S, C).
    pub latent: Array3<f64>,
    pub ppg_skips: SkipPair,
    pub acc_skips: SkipPair,
}

impl Encoder {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Encoder {
            ppg: Stem::new(ps, "encoder.ppg", 1, cfg, rng),
            acc: Stem::new(ps, "encoder.acc", 3, cfg, rng),
            mhca: MultiHeadAttention::new(
                ps,
                "encoder.mhca",
                cfg.latent_dim(),
                cfg.attention_heads,
                rng,
            ),
            ln: LayerNorm::new(ps, "encoder.ln", cfg.latent_dim()),
        })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array3<f64>) -> (EncoderOutput, EncoderCache) {
        let ppg_in = x.slice(s![.., 0..1, ..]).to_owned();
        let acc_in = x.slice(s![.., 1..4, ..]).to_owned();

        let (ppg_feat, ppg_skips, ppg_cache) = self.ppg.forward(ps, &ppg_in);
        let (acc_feat, acc_skips, acc_cache) = self.acc.forward(ps, &acc_in);

        let ppg_seq = channels_to_seq(&ppg_feat);
        let acc_seq = channels_to_seq(&acc_feat);
        let (attn_out, attn_cache) = self.mhca.forward(ps, &ppg_seq, &acc_seq);
        let (latent, ln_cache) = self.ln.forward(ps, &attn_out);

        (
            EncoderOutput { latent, ppg_skips, acc_skips },
            EncoderCache { ppg: ppg_cache, acc: acc_cache, attn: attn_cache, ln: ln_cache },
        )
    }

    /// Backward through the encoder. `d_latent` is (B, S, C); skip gradients,
    /// when given, flow into the stems' pre-pool activations.
    pub fn backward(
        &self,
        ps: &mut ParamStore,
        cache: &EncoderCache,
        d_latent: &Array3<f64>,
        d_ppg_skips: Option<&SkipPair>,
        d_acc_skips: Option<&SkipPair>,
    ) -> Array3<f64> {
        let d_attn = self.ln.backward(ps, &cache.ln, d_latent);
        let (d_ppg_seq, d_acc_seq) = self.mhca.backward(ps, &cache.attn, &d_attn);
        let d_ppg_feat = seq_to_channels(&d_ppg_seq);
        let d_acc_feat = seq_to_channels(&d_acc_seq);

        let d_ppg_in = self.ppg.backward(ps, &cache.ppg, &d_ppg_feat, d_ppg_skips);
        let d_acc_in = self.acc.backward(ps, &cache.acc, &d_acc_feat, d_acc_skips);

        let (b, _, l) = d_ppg_in.dim();
        let mut dx = Array3::<f64>::zeros((b, 4, l));
        dx.slice_mut(s![.., 0..1, ..]).assign(&d_ppg_in);
        dx.slice_mut(s![.., 1..4, ..]).assign(&d_acc_in);
        dx
    }
}

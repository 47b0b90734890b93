//! Autoencoder restructuring of the estimator.
//!
//! The encoder is the estimator with the regression head removed. A single
//! self-attention module sits at the bottleneck (query = key = value =
//! latent); the decoder then mirrors the two conv stems with transposed
//! convolutions, one stem reconstructing the PPG channel and one the three
//! accelerometer channels. Skip connections carry the pre-pool activations
//! of encoder blocks 1 and 2 into the matching decoder stages, where the
//! concatenation doubles the channel count while the upsampling doubles the
//! length. With `skip_connections` off, the same stages run concat-free.

use ndarray::{s, Array3};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{
    channels_to_seq, concat_channels, relu, relu_backward, seq_to_channels, split_channels,
    AttentionCache, Conv1d, Conv1dCache, ConvTranspose1d, ConvTranspose1dCache, LayerNorm,
    LayerNormCache, MultiHeadAttention, ReluCache,
};
use crate::nn::ParamStore;
use crate::util::rng_for;

use super::encoder::{Encoder, EncoderCache, SkipPair};
use super::{ModelConfig, Variant};

/// One upsampling stage: transposed conv (length ×2), optional skip concat,
/// then two same-length convolutions. All activations ReLU.
struct UpStage {
    up: ConvTranspose1d,
    conv1: Conv1d,
    conv2: Conv1d,
    skip_channels: Option<usize>,
}

struct UpStageCache {
    up: ConvTranspose1dCache,
    up_relu: ReluCache,
    concat_first: usize,
    conv1: (Conv1dCache, ReluCache),
    conv2: (Conv1dCache, ReluCache),
}

impl UpStage {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_up: usize,
        c_out: usize,
        skip_channels: Option<usize>,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (k, dil) = cfg.conv_geometry();
        let c_mid = c_up + skip_channels.unwrap_or(0);
        UpStage {
            up: ConvTranspose1d::new(ps, &format!("{name}.up"), c_in, c_up, rng),
            conv1: Conv1d::new(ps, &format!("{name}.conv1"), c_mid, c_out, k, dil, rng),
            conv2: Conv1d::new(ps, &format!("{name}.conv2"), c_out, c_out, k, dil, rng),
            skip_channels,
        }
    }

    fn forward(
        &self,
        ps: &ParamStore,
        x: &Array3<f64>,
        skip: Option<&Array3<f64>>,
    ) -> (Array3<f64>, UpStageCache) {
        let (up_raw, up_cache) = self.up.forward(ps, x);
        let (up_act, up_relu) = relu(&up_raw);
        debug_assert_eq!(skip.is_some(), self.skip_channels.is_some());
        let joined = match skip {
            Some(skip) => concat_channels(&up_act, skip),
            None => up_act,
        };
        let concat_first = joined.dim().1 - self.skip_channels.unwrap_or(0);
        let (h1, c1) = self.conv1.forward(ps, &joined);
        let (a1, r1) = relu(&h1);
        let (h2, c2) = self.conv2.forward(ps, &a1);
        let (a2, r2) = relu(&h2);
        (
            a2,
            UpStageCache { up: up_cache, up_relu, concat_first, conv1: (c1, r1), conv2: (c2, r2) },
        )
    }

    /// Returns (d_x, d_skip).
    fn backward(
        &self,
        ps: &mut ParamStore,
        cache: &UpStageCache,
        dy: &Array3<f64>,
    ) -> (Array3<f64>, Option<Array3<f64>>) {
        let d_h2 = relu_backward(&cache.conv2.1, dy);
        let d_a1 = self.conv2.backward(ps, &cache.conv2.0, &d_h2);
        let d_h1 = relu_backward(&cache.conv1.1, &d_a1);
        let d_joined = self.conv1.backward(ps, &cache.conv1.0, &d_h1);
        let (d_up_act, d_skip) = if self.skip_channels.is_some() {
            let (a, b) = split_channels(&d_joined, cache.concat_first);
            (a, Some(b))
        } else {
            (d_joined, None)
        };
        let d_up_raw = relu_backward(&cache.up_relu, &d_up_act);
        let d_x = self.up.backward(ps, &cache.up, &d_up_raw);
        (d_x, d_skip)
    }
}

/// Decoder for one modality: three upsampling stages plus a linear output conv.
struct DecoderStem {
    stages: [UpStage; 3],
    out: Conv1d,
}

struct DecoderStemCache {
    stages: [UpStageCache; 3],
    out: Conv1dCache,
}

impl DecoderStem {
    fn new(
        ps: &mut ParamStore,
        name: &str,
        c_out: usize,
        cfg: &ModelConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let [c1, c2, c3] = cfg.block_channels;
        let skips = cfg.skip_connections;
        let (k, dil) = cfg.conv_geometry();
        let stages = [
            // latent (c3, S) -> (c2, 2S)
            UpStage::new(ps, &format!("{name}.s1"), c3, c2, c2, None, cfg, rng),
            // (c2, 2S) -> up (c2, 4S) [+ skip c2] -> (c1, 4S)
            UpStage::new(ps, &format!("{name}.s2"), c2, c2, c1, skips.then_some(c2), cfg, rng),
            // (c1, 4S) -> up (c1, 8S) [+ skip c1] -> (c1, 8S)
            UpStage::new(ps, &format!("{name}.s3"), c1, c1, c1, skips.then_some(c1), cfg, rng),
        ];
        let out = Conv1d::new(ps, &format!("{name}.out"), c1, c_out, k, dil, rng);
        DecoderStem { stages, out }
    }

    fn forward(
        &self,
        ps: &ParamStore,
        latent: &Array3<f64>,
        skips: Option<&SkipPair>,
    ) -> (Array3<f64>, DecoderStemCache) {
        let (h1, s1) = self.stages[0].forward(ps, latent, None);
        let (h2, s2) = self.stages[1].forward(ps, &h1, skips.map(|s| &s.s2));
        let (h3, s3) = self.stages[2].forward(ps, &h2, skips.map(|s| &s.s1));
        let (y, out_cache) = self.out.forward(ps, &h3);
        (y, DecoderStemCache { stages: [s1, s2, s3], out: out_cache })
    }

    /// Returns (d_latent, d_skips).
    fn backward(
        &self,
        ps: &mut ParamStore,
        cache: &DecoderStemCache,
        dy: &Array3<f64>,
    ) -> (Array3<f64>, Option<SkipPair>) {
        let d_h3 = self.out.backward(ps, &cache.out, dy);
        let (d_h2, d_skip1) = self.stages[2].backward(ps, &cache.stages[2], &d_h3);
        let (d_h1, d_skip2) = self.stages[1].backward(ps, &cache.stages[1], &d_h2);
        let (d_latent, _) = self.stages[0].backward(ps, &cache.stages[0], &d_h1);
        let d_skips = match (d_skip1, d_skip2) {
            (Some(s1), Some(s2)) => Some(SkipPair { s1, s2 }),
            _ => None,
        };
        (d_latent, d_skips)
    }
}

pub struct Autoencoder {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    self_attn: MultiHeadAttention,
    ln: LayerNorm,
    ppg_dec: DecoderStem,
    acc_dec: DecoderStem,
}

pub struct AutoencoderCache {
    enc: EncoderCache,
    attn: AttentionCache,
    ln: LayerNormCache,
    ppg: DecoderStemCache,
    acc: DecoderStemCache,
    used_skips: bool,
}

impl Autoencoder {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.variant != Variant::Autoencoder {
            return Err(Error::config("autoencoder build needs variant = autoencoder"));
        }
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut enc_rng = rng_for(seed, "init.encoder");
        let encoder = Encoder::new(&mut params, cfg, &mut enc_rng)?;

        let mut dec_rng = rng_for(seed, "init.decoder");
        let dim = cfg.latent_dim();
        let self_attn =
            MultiHeadAttention::new(&mut params, "decoder.attn", dim, cfg.attention_heads, &mut dec_rng);
        let ln = LayerNorm::new(&mut params, "decoder.ln", dim);
        let ppg_dec = DecoderStem::new(&mut params, "decoder.ppg", 1, cfg, &mut dec_rng);
        let acc_dec = DecoderStem::new(&mut params, "decoder.acc", 3, cfg, &mut dec_rng);

        Ok(Autoencoder { cfg: cfg.clone(), params, encoder, self_attn, ln, ppg_dec, acc_dec })
    }

    pub fn encoder_latent(&self, x: &Array3<f64>) -> Array3<f64> {
        let (out, _) = self.encoder.forward(&self.params, x);
        out.latent
    }

    /// Reconstruction: (B, 4, L) → (B, 4, L).
    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Array3<f64>) -> (Array3<f64>, AutoencoderCache) {
        let ps = &self.params;
        let (enc_out, enc_cache) = self.encoder.forward(ps, x);

        let (attn_out, attn_cache) = self.self_attn.forward(ps, &enc_out.latent, &enc_out.latent);
        let (bottleneck, ln_cache) = self.ln.forward(ps, &attn_out);
        let latent_ch = seq_to_channels(&bottleneck);

        let used_skips = self.cfg.skip_connections;
        let ppg_skips = used_skips.then_some(&enc_out.ppg_skips);
        let acc_skips = used_skips.then_some(&enc_out.acc_skips);
        let (ppg_rec, ppg_cache) = self.ppg_dec.forward(ps, &latent_ch, ppg_skips);
        let (acc_rec, acc_cache) = self.acc_dec.forward(ps, &latent_ch, acc_skips);

        let (b, _, l) = ppg_rec.dim();
        let mut recon = Array3::<f64>::zeros((b, 4, l));
        recon.slice_mut(s![.., 0..1, ..]).assign(&ppg_rec);
        recon.slice_mut(s![.., 1..4, ..]).assign(&acc_rec);

        (
            recon,
            AutoencoderCache {
                enc: enc_cache,
                attn: attn_cache,
                ln: ln_cache,
                ppg: ppg_cache,
                acc: acc_cache,
                used_skips,
            },
        )
    }

    /// Accumulate gradients for `d_recon` (B, 4, L); returns the input gradient.
    pub fn backward(&mut self, cache: &AutoencoderCache, d_recon: &Array3<f64>) -> Array3<f64> {
        let Autoencoder { params, encoder, self_attn, ln, ppg_dec, acc_dec, .. } = self;

        let d_ppg_rec = d_recon.slice(s![.., 0..1, ..]).to_owned();
        let d_acc_rec = d_recon.slice(s![.., 1..4, ..]).to_owned();

        let (d_latent_ppg, d_ppg_skips) = ppg_dec.backward(params, &cache.ppg, &d_ppg_rec);
        let (d_latent_acc, d_acc_skips) = acc_dec.backward(params, &cache.acc, &d_acc_rec);
        let d_latent_ch = d_latent_ppg + d_latent_acc;

        let d_bottleneck = channels_to_seq(&d_latent_ch);
        let d_attn_out = ln.backward(params, &cache.ln, &d_bottleneck);
        let (d_q, d_kv) = self_attn.backward(params, &cache.attn, &d_attn_out);
        let d_enc_latent = d_q + d_kv;

        encoder.backward(
            params,
            &cache.enc,
            &d_enc_latent,
            d_ppg_skips.as_ref().filter(|_| cache.used_skips),
            d_acc_skips.as_ref().filter(|_| cache.used_skips),
        )
    }
}

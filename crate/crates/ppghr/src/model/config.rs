//! Architecture hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Conv stems + cross-attention + dense regression head → one BPM scalar.
    Estimator,
    /// Same encoder with the head removed, plus a mirrored deconv decoder.
    Autoencoder,
}

/// Hyperparameters of the estimator / autoencoder pair.
///
/// The defaults give the deployed geometry: two parallel stems of three conv
/// blocks with channels (32, 48, 64), three layers per block, kernel 9 at
/// dilation 1, average pooling by 2 after each block, a 4-head cross-attention
/// fusing PPG queries with accelerometer keys/values, and a two-layer dense
/// head. `legacy_dilated` switches the convolutions to kernel 5 / dilation 2,
/// which spans the same receptive field per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub block_channels: [usize; 3],
    pub layers_per_block: usize,
    pub kernel_len: usize,
    pub dilation: usize,
    pub pool_factor: usize,
    pub attention_heads: usize,
    pub head_hidden: usize,
    /// (channels, samples) of one input window.
    pub input_shape: (usize, usize),
    pub variant: Variant,
    /// Kernel 5 / dilation 2 baseline geometry.
    pub legacy_dilated: bool,
    /// Decoder skip connections (autoencoder only); ablation switch.
    pub skip_connections: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            block_channels: [32, 48, 64],
            layers_per_block: 3,
            kernel_len: 9,
            dilation: 1,
            pool_factor: 2,
            attention_heads: 4,
            head_hidden: 8,
            input_shape: (4, 256),
            variant: Variant::Estimator,
            legacy_dilated: false,
            skip_connections: true,
        }
    }
}

impl ModelConfig {
    pub fn autoencoder(mut self) -> Self {
        self.variant = Variant::Autoencoder;
        self
    }

    pub fn estimator(mut self) -> Self {
        self.variant = Variant::Estimator;
        self
    }

    pub fn legacy(mut self) -> Self {
        self.legacy_dilated = true;
        self
    }

    /// Reduced geometry for tests: channels (2, 3, 4) on 32-sample windows.
    pub fn tiny() -> Self {
        ModelConfig {
            block_channels: [2, 3, 4],
            layers_per_block: 3,
            kernel_len: 9,
            dilation: 1,
            pool_factor: 2,
            attention_heads: 2,
            head_hidden: 4,
            input_shape: (4, 32),
            variant: Variant::Estimator,
            legacy_dilated: false,
            skip_connections: true,
        }
    }

    /// Effective (kernel, dilation) after the legacy switch.
    pub fn conv_geometry(&self) -> (usize, usize) {
        if self.legacy_dilated {
            (5, 2)
        } else {
            (self.kernel_len, self.dilation)
        }
    }

    /// Per-layer receptive-field span `(kernel − 1) · dilation`.
    pub fn receptive_span(&self) -> usize {
        let (k, d) = self.conv_geometry();
        (k - 1) * d
    }

    /// Sequence length after the three pooled blocks.
    pub fn latent_len(&self) -> usize {
        self.input_shape.1 / self.pool_factor.pow(3)
    }

    /// Feature width of the latent sequence.
    pub fn latent_dim(&self) -> usize {
        self.block_channels[2]
    }

    pub fn validate(&self) -> Result<()> {
        let (_, len) = self.input_shape;
        let cube = self.pool_factor.pow(3);
        if cube == 0 || len % cube != 0 {
            return Err(Error::config(format!(
                "pool_factor^3 = {cube} must divide the window length {len}"
            )));
        }
        let (k, _) = self.conv_geometry();
        if k % 2 == 0 {
            return Err(Error::config("kernel length must be odd".to_string()));
        }
        if self.latent_dim() % self.attention_heads != 0 {
            return Err(Error::config(format!(
                "attention heads {} must divide the latent width {}",
                self.attention_heads,
                self.latent_dim()
            )));
        }
        if self.layers_per_block == 0 || self.head_hidden == 0 {
            return Err(Error::config("layer counts must be positive".to_string()));
        }
        if self.input_shape.0 != 4 {
            return Err(Error::config(format!(
                "expected 4 input channels (PPG + 3 ACC), got {}",
                self.input_shape.0
            )));
        }
        Ok(())
    }

    /// Fields that must agree for encoder weights to transfer.
    pub fn encoder_fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("block_channels", format!("{:?}", self.block_channels)),
            ("layers_per_block", self.layers_per_block.to_string()),
            ("kernel_len", self.kernel_len.to_string()),
            ("dilation", self.dilation.to_string()),
            ("pool_factor", self.pool_factor.to_string()),
            ("attention_heads", self.attention_heads.to_string()),
            ("input_shape", format!("{:?}", self.input_shape)),
            ("legacy_dilated", self.legacy_dilated.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn receptive_field_equivalence() {
        let modern = ModelConfig::default();
        let legacy = ModelConfig::default().legacy();
        assert_eq!(modern.receptive_span(), 8);
        assert_eq!(legacy.receptive_span(), 8);
    }

    #[test]
    fn default_validates() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn bad_pool_is_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.input_shape = (4, 250);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn latent_geometry() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.latent_len(), 32);
        assert_eq!(cfg.latent_dim(), 64);
    }
}

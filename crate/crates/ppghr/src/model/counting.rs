//! Analytic parameter and multiply-accumulate accounting.
//!
//! Counts follow the standard conventions: a convolution contributes
//! `C_in · C_out · k · L_out` MACs, a dense layer `in · out`, and attention
//! its Q/K/V/O projections plus the score and context products. Pooling,
//! activations and normalization are not counted. Parameters are exact
//! trainable scalar counts (weights + biases, norm gains included), which the
//! tests cross-check against the allocated parameter store.

use super::{ModelConfig, Variant};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct LayerStat {
    pub name: String,
    pub output_shape: String,
    pub params: usize,
    pub macs: usize,
}

fn conv(name: &str, c_in: usize, c_out: usize, k: usize, l_out: usize) -> LayerStat {
    LayerStat {
        name: name.to_string(),
        output_shape: format!("({c_out}, {l_out})"),
        params: c_out * (c_in * k + 1),
        macs: c_in * c_out * k * l_out,
    }
}

fn dense(name: &str, c_in: usize, c_out: usize) -> LayerStat {
    LayerStat {
        name: name.to_string(),
        output_shape: format!("({c_out},)"),
        params: c_out * (c_in + 1),
        macs: c_in * c_out,
    }
}

fn attention(name: &str, s_q: usize, s_k: usize, dim: usize) -> LayerStat {
    let proj = (s_q + 2 * s_k + s_q) * dim * dim; // Q, K, V, O projections
    let scores = s_q * s_k * dim;
    let context = s_q * s_k * dim;
    LayerStat {
        name: name.to_string(),
        output_shape: format!("({s_q}, {dim})"),
        params: 4 * (dim * dim + dim),
        macs: proj + scores + context,
    }
}

fn layer_norm(name: &str, dim: usize, seq: usize) -> LayerStat {
    LayerStat {
        name: name.to_string(),
        output_shape: format!("({seq}, {dim})"),
        params: 2 * dim,
        macs: 0,
    }
}

fn stem(out: &mut Vec<LayerStat>, name: &str, c_in: usize, cfg: &ModelConfig) {
    let (k, _) = cfg.conv_geometry();
    let [c1, c2, c3] = cfg.block_channels;
    let mut len = cfg.input_shape.1;
    for (b, (cin, cout)) in [(c_in, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
        for layer in 0..cfg.layers_per_block {
            let ci = if layer == 0 { cin } else { cout };
            out.push(conv(&format!("{name}.b{}.conv{}", b + 1, layer + 1), ci, cout, k, len));
        }
        len /= cfg.pool_factor;
    }
}

fn decoder_stem(out: &mut Vec<LayerStat>, name: &str, c_out: usize, cfg: &ModelConfig) {
    let (k, _) = cfg.conv_geometry();
    let [c1, c2, c3] = cfg.block_channels;
    let s = cfg.latent_len();
    let k_up = 4;
    let skip = cfg.skip_connections;

    // stage 1: (c3, S) -> (c2, 2S)
    out.push(conv_t(&format!("{name}.s1.up"), c3, c2, k_up, s));
    out.push(conv(&format!("{name}.s1.conv1"), c2, c2, k, 2 * s));
    out.push(conv(&format!("{name}.s1.conv2"), c2, c2, k, 2 * s));
    // stage 2: (c2, 2S) -> (c1, 4S), concat doubles channels when skips are on
    out.push(conv_t(&format!("{name}.s2.up"), c2, c2, k_up, 2 * s));
    let c2_in = if skip { 2 * c2 } else { c2 };
    out.push(conv(&format!("{name}.s2.conv1"), c2_in, c1, k, 4 * s));
    out.push(conv(&format!("{name}.s2.conv2"), c1, c1, k, 4 * s));
    // stage 3: (c1, 4S) -> (c1, 8S)
    out.push(conv_t(&format!("{name}.s3.up"), c1, c1, k_up, 4 * s));
    let c1_in = if skip { 2 * c1 } else { c1 };
    out.push(conv(&format!("{name}.s3.conv1"), c1_in, c1, k, 8 * s));
    out.push(conv(&format!("{name}.s3.conv2"), c1, c1, k, 8 * s));
    out.push(conv(&format!("{name}.out"), c1, c_out, k, 8 * s));
}

fn conv_t(name: &str, c_in: usize, c_out: usize, k: usize, l_in: usize) -> LayerStat {
    LayerStat {
        name: name.to_string(),
        output_shape: format!("({c_out}, {})", 2 * l_in),
        params: c_in * c_out * k + c_out,
        macs: c_in * c_out * k * l_in,
    }
}

/// Per-layer parameter/MAC table for one forward pass on a single window.
pub fn layer_table(cfg: &ModelConfig) -> Result<Vec<LayerStat>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let s = cfg.latent_len();
    let dim = cfg.latent_dim();

    stem(&mut out, "encoder.ppg", 1, cfg);
    stem(&mut out, "encoder.acc", 3, cfg);
    out.push(attention("encoder.mhca", s, s, dim));
    out.push(layer_norm("encoder.ln", dim, s));

    match cfg.variant {
        Variant::Estimator => {
            out.push(dense("head.fc1", s * dim, cfg.head_hidden));
            out.push(dense("head.fc2", cfg.head_hidden, 1));
        }
        Variant::Autoencoder => {
            out.push(attention("decoder.attn", s, s, dim));
            out.push(layer_norm("decoder.ln", dim, s));
            decoder_stem(&mut out, "decoder.ppg", 1, cfg);
            decoder_stem(&mut out, "decoder.acc", 3, cfg);
        }
    }
    Ok(out)
}

/// Exact trainable parameter count for the configured architecture.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(layer_table(cfg)?.iter().map(|l| l.params).sum())
}

/// Analytic multiply-accumulate count for one window forward pass.
pub fn count_macs(cfg: &ModelConfig) -> Result<usize> {
    Ok(layer_table(cfg)?.iter().map(|l| l.macs).sum())
}

/// Human-readable layer table (the `model describe` output).
pub fn render_table(cfg: &ModelConfig) -> Result<String> {
    let stats = layer_table(cfg)?;
    let mut s = String::new();
    s.push_str(&format!(
        "{:<22} {:>14} {:>12} {:>14}\n",
        "layer", "output", "params", "macs"
    ));
    for row in &stats {
        s.push_str(&format!(
            "{:<22} {:>14} {:>12} {:>14}\n",
            row.name, row.output_shape, row.params, row.macs
        ));
    }
    let params: usize = stats.iter().map(|l| l.params).sum();
    let macs: usize = stats.iter().map(|l| l.macs).sum();
    s.push_str(&format!(
        "{:<22} {:>14} {:>12} {:>14}\n",
        "total", "", params, macs
    ));
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_mac_formula() {
        let stat = conv("x", 32, 48, 9, 128);
        assert_eq!(stat.macs, 1_769_472);
        assert_eq!(stat.params, 48 * (32 * 9 + 1));
    }

    #[test]
    fn single_dense_formula() {
        let stat = dense("x", 64, 1);
        assert_eq!(stat.macs, 64);
        assert_eq!(stat.params, 65);
    }

    #[test]
    fn default_estimator_budget() {
        let cfg = ModelConfig::default();
        let params = count_params(&cfg).unwrap();
        let macs = count_macs(&cfg).unwrap();
        assert_eq!(params, 385_393);
        assert_eq!(macs, 37_535_752);
    }

    #[test]
    fn legacy_estimator_budget() {
        let cfg = ModelConfig::default().legacy();
        let params = count_params(&cfg).unwrap();
        let macs = count_macs(&cfg).unwrap();
        assert_eq!(params, 229_233);
        assert_eq!(macs, 21_151_752);
    }

    #[test]
    fn table_renders_every_layer() {
        let cfg = ModelConfig::default().autoencoder();
        let table = render_table(&cfg).unwrap();
        assert!(table.contains("decoder.ppg.s2.conv1"));
        assert!(table.contains("total"));
    }
}

//! Rough step-time probe for sizing the training tests.

use ndarray::Array3;
use ppghr::model::{mse_multimodal_grad, Autoencoder, ModelConfig};
use ppghr::nn::Adam;
use std::time::Instant;

fn time_config(name: &str, cfg: &ModelConfig, batch: usize, steps: usize) {
    let mut ae = Autoencoder::build(cfg, 0).unwrap();
    let x = Array3::<f64>::from_shape_fn((batch, 4, cfg.input_shape.1), |(b, c, t)| {
        ((b + c) as f64 * 0.3 + t as f64 * 0.1).sin()
    });
    let mut opt = Adam::adamw(&ae.params, 1e-3, (0.9, 0.95), 0.01);
    let start = Instant::now();
    let mut loss = 0.0;
    for _ in 0..steps {
        ae.params.zero_grads();
        let (recon, cache) = ae.forward_cached(&x);
        let (l, d) = mse_multimodal_grad(&recon, &x).unwrap();
        loss = l;
        ae.backward(&cache, &d);
        opt.step(&mut ae.params);
    }
    let dt = start.elapsed().as_secs_f64();
    println!("{name}: {:.3} s/step (last loss {loss:.4})", dt / steps as f64);
}

fn main() {
    let full = ModelConfig::default().autoencoder();
    let mut half = ModelConfig::default().autoencoder();
    half.block_channels = [16, 24, 32];
    half.attention_heads = 4;
    let mut quarter = ModelConfig::default().autoencoder();
    quarter.block_channels = [8, 12, 16];
    quarter.attention_heads = 4;

    time_config("quarter (8,12,16) b32", &quarter, 32, 5);
    time_config("half (16,24,32) b32", &half, 32, 5);
    time_config("full (32,48,64) b32", &full, 32, 3);
}

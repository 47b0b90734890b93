//! Probe: steps to overfit one 32-window batch, skips vs ablated.

use ndarray::Array3;
use ppghr::model::{mse_multimodal, mse_multimodal_grad, Autoencoder, ModelConfig};
use ppghr::nn::Adam;
use std::time::Instant;

fn synth_batch(b: usize, len: usize) -> Array3<f64> {
    // tone mixture per window, unit-ish scale like z-scored data
    Array3::from_shape_fn((b, 4, len), |(i, c, t)| {
        let f = 0.8 + 0.05 * i as f64 + 0.3 * c as f64;
        let phase = i as f64 * 0.7 + c as f64 * 1.3;
        (2.0 * std::f64::consts::PI * f * t as f64 / 32.0 + phase).sin()
    })
}

fn run(name: &str, cfg: &ModelConfig, steps: usize) -> Vec<f64> {
    let mut ae = Autoencoder::build(cfg, 11).unwrap();
    let x = synth_batch(32, cfg.input_shape.1);
    let mut opt = Adam::adamw(&ae.params, 1e-3, (0.9, 0.95), 0.01);
    let start = Instant::now();
    let mut losses = Vec::new();
    for step in 0..steps {
        ae.params.zero_grads();
        let (recon, cache) = ae.forward_cached(&x);
        let (l, d) = mse_multimodal_grad(&recon, &x).unwrap();
        ae.backward(&cache, &d);
        opt.step(&mut ae.params);
        losses.push(l);
        if step % 25 == 0 || l < 1e-2 {
            println!("{name} step {step}: mse {l:.5} ({:.1}s)", start.elapsed().as_secs_f64());
        }
        if l < 1e-2 {
            break;
        }
    }
    let final_mse = mse_multimodal(&ae.forward(&x), &x).unwrap();
    println!("{name}: final {final_mse:.5} after {} steps, {:.1}s", losses.len(), start.elapsed().as_secs_f64());
    losses
}

fn main() {
    let mut cfg = ModelConfig::default().autoencoder();
    cfg.block_channels = [8, 12, 16];
    let l1 = run("skips", &cfg, 400);
    let mut ablated = cfg.clone();
    ablated.skip_connections = false;
    let _l2 = run("ablated", &ablated, l1.len());
}

//! Frequency-scaling augmentation for pre-training corpora.
//!
//! Two label-free transforms expand the apparent BPM range of a corpus:
//!
//! * [`divide`] — pick a random contiguous section of length `T/d` (the same
//!   section on all four channels) and stretch it back to `T` samples,
//!   dividing apparent frequencies by `d`;
//! * [`multiply`] — compress the window to `round(T/k)` samples (raising
//!   apparent frequencies by `k`), then tile the compressed segment
//!   periodically back out to `T` samples.
//!
//! The default grid is `divide:2` plus `multiply` factors 1.2‥2.0 in steps of
//! 0.1 — ten transforms, an 11× corpus expansion. Labels are never touched;
//! these transforms are meant for the self-supervised stage only.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{SignalWindow, WindowedDataset, NUM_CHANNELS};
use crate::signal::resize_linear;
use crate::util;

/// One frequency-scaling transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// Divide apparent frequency by an integer factor ≥ 2.
    Divide(u32),
    /// Multiply apparent frequency by a factor > 1.
    Multiply(f64),
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transform::Divide(d) => write!(f, "divide:{d}"),
            Transform::Multiply(k) => write!(f, "multiply:{k}"),
        }
    }
}

/// Ordered transform list plus the seed for the per-window random offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub transforms: Vec<Transform>,
    pub rng_seed: u64,
}

impl AugmentationSpec {
    /// `divide:2` plus `multiply` 1.2‥2.0 step 0.1 — expansion factor 11.
    pub fn default_grid(rng_seed: u64) -> Self {
        let mut transforms = vec![Transform::Divide(2)];
        transforms.extend(multiply_range(1.2, 2.0, 0.1).unwrap().into_iter().map(Transform::Multiply));
        AugmentationSpec { transforms, rng_seed }
    }

    /// Output size multiplier of [`expand_dataset`].
    pub fn expansion_factor(&self) -> usize {
        1 + self.transforms.len()
    }
}

/// Enumerate multiply factors `lo..=hi` at `step`, rounded to the grid so
/// float drift cannot drop the endpoint.
pub fn multiply_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo > 1.0) || !(hi >= lo) || !(step > 0.0) {
        return Err(Error::argument(format!(
            "bad multiply range {lo}-{hi}:{step}: need 1 < lo <= hi and step > 0"
        )));
    }
    let count = ((hi - lo) / step).round() as usize + 1;
    Ok((0..count)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .filter(|&k| k <= hi + 1e-9)
        .collect())
}

/// Parse a grid description like `"divide:2,multiply:1.2-2.0:0.1"`.
///
/// Entries are comma-separated; `divide:<d>` adds one transform,
/// `multiply:<k>` one factor, `multiply:<lo>-<hi>:<step>` a whole range.
pub fn parse_grid(s: &str) -> Result<Vec<Transform>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (kind, rest) = part
            .split_once(':')
            .ok_or_else(|| Error::argument(format!("grid entry `{part}`: expected kind:args")))?;
        match kind {
            "divide" => {
                let d: u32 = rest
                    .parse()
                    .map_err(|_| Error::argument(format!("grid entry `{part}`: bad divisor")))?;
                if d < 2 {
                    return Err(Error::argument(format!("divide factor must be ≥ 2, got {d}")));
                }
                out.push(Transform::Divide(d));
            }
            "multiply" => {
                if let Some((range, step)) = rest.rsplit_once(':') {
                    let (lo, hi) = range.split_once('-').ok_or_else(|| {
                        Error::argument(format!("grid entry `{part}`: expected lo-hi:step"))
                    })?;
                    let lo: f64 = lo.parse().map_err(|_| bad_num(part))?;
                    let hi: f64 = hi.parse().map_err(|_| bad_num(part))?;
                    let step: f64 = step.parse().map_err(|_| bad_num(part))?;
                    out.extend(multiply_range(lo, hi, step)?.into_iter().map(Transform::Multiply));
                } else {
                    let k: f64 = rest.parse().map_err(|_| bad_num(part))?;
                    if !(k > 1.0) {
                        return Err(Error::argument(format!(
                            "multiply factor must be > 1, got {k}"
                        )));
                    }
                    out.push(Transform::Multiply(k));
                }
            }
            other => {
                return Err(Error::argument(format!(
                    "unknown transform kind `{other}` (expected divide or multiply)"
                )))
            }
        }
    }
    Ok(out)
}

fn bad_num(part: &str) -> Error {
    Error::argument(format!("grid entry `{part}`: bad number"))
}

/// Apply the same time warp to all four channels via a per-channel resize.
fn warp_window(
    window: &SignalWindow,
    section: std::ops::Range<usize>,
    out_len: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut channels = Vec::with_capacity(NUM_CHANNELS);
    for c in 0..NUM_CHANNELS {
        let row: Vec<f64> = window
            .data
            .row(c)
            .iter()
            .skip(section.start)
            .take(section.end - section.start)
            .map(|&v| v as f64)
            .collect();
        channels.push(resize_linear(&row, out_len)?);
    }
    Ok(channels)
}

fn rebuild(window: &SignalWindow, channels: Vec<Vec<f64>>) -> SignalWindow {
    let mut out = window.clone();
    for (c, row) in channels.into_iter().enumerate() {
        for (t, v) in row.into_iter().enumerate() {
            out.data[[c, t]] = v as f32;
        }
    }
    out
}

/// Frequency-divide transform: uniform random section of length `T/d`,
/// identical across channels, stretched back to `T` samples.
///
/// The offset is drawn from a counter-based stream keyed by
/// `(rng_seed, window_index)` so expansion is reproducible and order-free.
pub fn divide(window: &SignalWindow, d: u32, rng_seed: u64, window_index: u64) -> Result<SignalWindow> {
    let t = window.data.ncols();
    if d < 2 || t / (d as usize) < 2 {
        return Err(Error::argument(format!(
            "divide factor {d} leaves fewer than 2 samples of a {t}-sample window"
        )));
    }
    let sec_len = t / d as usize;
    let mut rng =
        ChaCha8Rng::seed_from_u64(util::derive_seed_indexed(rng_seed, "augment.divide", window_index));
    let offset = rng.gen_range(0..=(t - sec_len));
    let channels = warp_window(window, offset..offset + sec_len, t)?;
    Ok(rebuild(window, channels))
}

/// Frequency-multiply transform: compress to `round(T/k)` samples, then tile
/// the compressed segment periodically out to `T`.
pub fn multiply(window: &SignalWindow, k: f64) -> Result<SignalWindow> {
    let t = window.data.ncols();
    if !(k > 1.0) || !k.is_finite() {
        return Err(Error::argument(format!("multiply factor must be > 1, got {k}")));
    }
    let compressed = (t as f64 / k).round() as usize;
    if compressed < 8 {
        return Err(Error::argument(format!(
            "multiply factor {k} compresses a {t}-sample window below 8 samples"
        )));
    }
    let channels = warp_window(window, 0..t, compressed)?;
    let tiled: Vec<Vec<f64>> = channels
        .into_iter()
        .map(|row| (0..t).map(|i| row[i % compressed]).collect())
        .collect();
    Ok(rebuild(window, tiled))
}

/// Expand a corpus: all originals first, then for each transform in spec
/// order, a transformed copy of every window in original order.
pub fn expand_dataset(ds: &WindowedDataset, spec: &AugmentationSpec) -> Result<WindowedDataset> {
    let mut out = ds.clone();
    out.windows.reserve(ds.len() * spec.transforms.len());
    for transform in &spec.transforms {
        for (i, w) in ds.windows.iter().enumerate() {
            let copy = match *transform {
                Transform::Divide(d) => divide(w, d, spec.rng_seed, i as u64)?,
                Transform::Multiply(k) => multiply(w, k)?,
            };
            out.windows.push(copy);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn tone_window(freq: f64, amplitude: f64) -> SignalWindow {
        let fs = 32.0;
        let mut data = Array2::<f32>::zeros((NUM_CHANNELS, WINDOW_LEN));
        for c in 0..NUM_CHANNELS {
            for t in 0..WINDOW_LEN {
                data[[c, t]] =
                    (amplitude * (2.0 * std::f64::consts::PI * freq * t as f64 / fs).sin()) as f32;
            }
        }
        SignalWindow { data, subject_id: "syn".into(), label: Some(72.0) }
    }

    fn dominant_bin(row: &[f32]) -> usize {
        use rustfft::{num_complex::Complex, FftPlanner};
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(row.len());
        let mut buf: Vec<Complex<f64>> =
            row.iter().map(|&x| Complex::new(x as f64, 0.0)).collect();
        fft.process(&mut buf);
        (1..row.len() / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn divide_halves_the_tone() {
        let w = tone_window(2.0, 1.0);
        let out = divide(&w, 2, 1, 0).unwrap();
        assert_eq!(out.data.dim(), (4, 256));
        let row: Vec<f32> = out.data.row(0).to_vec();
        let bin = dominant_bin(&row);
        // 1 Hz over 8 s -> bin 8
        assert!((bin as i64 - 8).abs() <= 1, "bin {bin}");
    }

    #[test]
    fn multiply_doubles_the_tone() {
        let w = tone_window(1.0, 1.0);
        let out = multiply(&w, 2.0).unwrap();
        let row: Vec<f32> = out.data.row(0).to_vec();
        let bin = dominant_bin(&row);
        // 2 Hz over 8 s -> bin 16
        assert!((bin as i64 - 16).abs() <= 1, "bin {bin}");
    }

    #[test]
    fn multiply_near_identity_limit() {
        // k→1: round(256/k) stays 256, so the output matches the input
        // within interpolation error.
        let w = tone_window(1.5, 1.0);
        let out = multiply(&w, 1.0000001).unwrap();
        for (a, b) in w.data.iter().zip(out.data.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn divide_is_deterministic_per_seed() {
        let w = tone_window(2.0, 1.0);
        let a = divide(&w, 2, 9, 5).unwrap();
        let b = divide(&w, 2, 9, 5).unwrap();
        let c = divide(&w, 2, 10, 5).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn same_warp_on_all_channels() {
        // identical content per channel -> identical outputs per channel
        let w = tone_window(1.0, 1.0);
        let out = divide(&w, 2, 3, 1).unwrap();
        let first = out.data.row(0).to_owned();
        for c in 1..NUM_CHANNELS {
            assert_eq!(out.data.row(c), first.view());
        }
    }

    #[test]
    fn labels_are_never_touched() {
        let w = tone_window(1.0, 1.0);
        assert_eq!(divide(&w, 2, 0, 0).unwrap().label, Some(72.0));
        assert_eq!(multiply(&w, 1.5).unwrap().label, Some(72.0));
    }

    #[test]
    fn grid_parses_paper_defaults() {
        let grid = parse_grid("divide:2,multiply:1.2-2.0:0.1").unwrap();
        assert_eq!(grid.len(), 10);
        assert_eq!(grid[0], Transform::Divide(2));
        let ks: Vec<f64> = grid[1..]
            .iter()
            .map(|t| match t {
                Transform::Multiply(k) => *k,
                _ => panic!(),
            })
            .collect();
        assert_eq!(ks.len(), 9);
        assert!((ks[0] - 1.2).abs() < 1e-12);
        assert!((ks[8] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_nonsense() {
        assert!(parse_grid("divide:1").is_err());
        assert!(parse_grid("wobble:3").is_err());
        assert!(parse_grid("multiply:0.5").is_err());
        assert!(parse_grid("multiply:2.0-1.2:0.1").is_err());
    }

    #[test]
    fn expansion_factor_counts() {
        let spec = AugmentationSpec::default_grid(0);
        assert_eq!(spec.expansion_factor(), 11);

        let mut ds = WindowedDataset::default();
        for i in 0..7 {
            let mut w = tone_window(1.0 + 0.1 * i as f64, 1.0);
            w.subject_id = format!("s{i}");
            ds.windows.push(w);
        }
        let out = expand_dataset(&ds, &spec).unwrap();
        assert_eq!(out.len(), 77);

        let empty = AugmentationSpec { transforms: vec![], rng_seed: 0 };
        assert_eq!(expand_dataset(&ds, &empty).unwrap().len(), 7);
    }

    #[test]
    fn compressed_length_arithmetic() {
        // k = 1.5 -> round(256/1.5) = 171
        assert_eq!((256.0f64 / 1.5).round() as usize, 171);
        let w = tone_window(1.0, 1.0);
        let out = multiply(&w, 1.5).unwrap();
        assert_eq!(out.data.ncols(), 256);
    }
}

//! Rate conversion primitives.
//!
//! [`resample`] converts a stream between sample rates (64 Hz wrist PPG down
//! to the 32 Hz working rate, in practice). Downsampling applies a windowed-
//! sinc low-pass guard before linear interpolation so content above the
//! target Nyquist cannot alias onto the band we estimate heart rate in.
//! [`resize_linear`] is the rate-agnostic variant used by the augmentation
//! transforms: it maps N samples onto M samples with endpoints pinned.

use crate::error::{Error, Result};

/// Number of taps for the anti-alias FIR guard. Odd so the filter is
/// symmetric around a center tap (zero-phase after shift compensation).
const GUARD_TAPS: usize = 63;

/// Resample `signal` from `fs_in` to `fs_out` Hz.
///
/// Output length is `round(len * fs_out / fs_in)`. A constant input comes
/// back bit-identical; a pure tone below the output Nyquist keeps its
/// dominant FFT bin within ±1 bin.
pub fn resample(signal: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if !(fs_in > 0.0) || !(fs_out > 0.0) {
        return Err(Error::argument(format!(
            "sample rates must be positive, got fs_in={fs_in}, fs_out={fs_out}"
        )));
    }
    if signal.is_empty() {
        return Ok(Vec::new());
    }
    if (fs_in - fs_out).abs() < 1e-9 {
        return Ok(signal.to_vec());
    }

    let out_len = ((signal.len() as f64) * fs_out / fs_in).round() as usize;
    if out_len == 0 {
        return Ok(Vec::new());
    }

    let filtered;
    let src: &[f64] = if fs_out < fs_in {
        filtered = lowpass_guard(signal, fs_in, fs_out);
        &filtered
    } else {
        signal
    };

    let ratio = fs_in / fs_out;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        out.push(sample_at(src, i as f64 * ratio));
    }
    Ok(out)
}

/// Linear interpolation at a fractional position, clamped to the signal.
fn sample_at(signal: &[f64], pos: f64) -> f64 {
    let last = signal.len() - 1;
    if pos <= 0.0 {
        return signal[0];
    }
    if pos >= last as f64 {
        return signal[last];
    }
    let j = pos.floor() as usize;
    let t = pos - j as f64;
    let a = signal[j];
    let b = signal[j + 1];
    // a + t*(b-a) rather than (1-t)*a + t*b: exact when a == b.
    a + t * (b - a)
}

/// Windowed-sinc low-pass with cutoff at the new Nyquist, edge-replicated
/// padding. The signal is filtered relative to its first sample so a constant
/// input passes through exactly.
fn lowpass_guard(signal: &[f64], fs_in: f64, fs_out: f64) -> Vec<f64> {
    let taps = design_lowpass(0.5 * fs_out / fs_in, GUARD_TAPS);
    let half = GUARD_TAPS / 2;
    let n = signal.len();
    let anchor = signal[0];
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for (j, &h) in taps.iter().enumerate() {
            let k = i as isize + j as isize - half as isize;
            let x = if k < 0 {
                signal[0]
            } else if k as usize >= n {
                signal[n - 1]
            } else {
                signal[k as usize]
            };
            acc += h * (x - anchor);
        }
        out[i] = anchor + acc;
    }
    out
}

/// Hamming-windowed sinc, normalized to unit DC gain.
/// `cutoff` is in cycles per input sample (0.5 = input Nyquist).
fn design_lowpass(cutoff: f64, taps: usize) -> Vec<f64> {
    debug_assert!(taps % 2 == 1);
    let m = (taps - 1) as f64;
    let mut h = Vec::with_capacity(taps);
    for i in 0..taps {
        let x = i as f64 - m / 2.0;
        let sinc = if x == 0.0 {
            2.0 * cutoff
        } else {
            (2.0 * std::f64::consts::PI * cutoff * x).sin() / (std::f64::consts::PI * x)
        };
        let w = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / m).cos();
        h.push(sinc * w);
    }
    let total: f64 = h.iter().sum();
    for v in &mut h {
        *v /= total;
    }
    h
}

/// Stretch or compress `signal` onto exactly `out_len` samples by linear
/// interpolation with both endpoints pinned. No anti-alias guard: the
/// augmentation transforms rely on the raw frequency scaling.
pub fn resize_linear(signal: &[f64], out_len: usize) -> Result<Vec<f64>> {
    if signal.is_empty() || out_len == 0 {
        return Err(Error::argument("resize_linear needs non-empty input/output"));
    }
    if out_len == 1 {
        return Ok(vec![signal[0]]);
    }
    let scale = (signal.len() - 1) as f64 / (out_len - 1) as f64;
    Ok((0..out_len)
        .map(|i| sample_at(signal, i as f64 * scale))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dominant_bin(signal: &[f64]) -> usize {
        use rustfft::{num_complex::Complex, FftPlanner};
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(signal.len());
        let mut buf: Vec<Complex<f64>> =
            signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
        fft.process(&mut buf);
        (1..signal.len() / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn halving_length_arithmetic() {
        let x = vec![0.0; 512];
        let y = resample(&x, 64.0, 32.0).unwrap();
        assert_eq!(y.len(), 256);
    }

    #[test]
    fn constant_signal_is_preserved_exactly() {
        let x = vec![3.7250981; 512];
        let y = resample(&x, 64.0, 32.0).unwrap();
        assert!(y.iter().all(|&v| v == 3.7250981));
        let up = resample(&x, 32.0, 64.0).unwrap();
        assert_eq!(up.len(), 1024);
        assert!(up.iter().all(|&v| v == 3.7250981));
    }

    #[test]
    fn tone_survives_downsampling() {
        // 4 Hz sinusoid sampled at 64 Hz for 8 s -> resampled to 32 Hz.
        let fs = 64.0;
        let x: Vec<f64> = (0..512)
            .map(|i| (2.0 * std::f64::consts::PI * 4.0 * i as f64 / fs).sin())
            .collect();
        let y = resample(&x, 64.0, 32.0).unwrap();
        assert_eq!(y.len(), 256);
        // 4 Hz at 32 Hz over 256 samples -> bin 32.
        let bin = dominant_bin(&y);
        assert!((bin as i64 - 32).abs() <= 1, "dominant bin {bin}");
    }

    #[test]
    fn above_nyquist_content_is_attenuated() {
        // 14 Hz tone is above the 8 Hz guard cutoff used for 64->16 Hz.
        let x: Vec<f64> = (0..640)
            .map(|i| (2.0 * std::f64::consts::PI * 14.0 * i as f64 / 64.0).sin())
            .collect();
        let y = resample(&x, 64.0, 16.0).unwrap();
        let energy: f64 = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!(energy < 0.05, "aliased energy {energy}");
    }

    #[test]
    fn rejects_non_positive_rates() {
        assert!(resample(&[1.0], 0.0, 32.0).is_err());
        assert!(resample(&[1.0], 64.0, -1.0).is_err());
    }

    #[test]
    fn resize_endpoints_pinned() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = resize_linear(&x, 7).unwrap();
        assert_eq!(y.len(), 7);
        assert_eq!(y[0], 1.0);
        assert_eq!(y[6], 4.0);
    }
}

//! Dataset ingestion: vendor archives → windowed, normalized corpora.
//!
//! The flow is `load_subject` → [`resample`](crate::signal::resample) to the
//! 32 Hz working rate → [`segment_windows`] into 8 s windows at a 2 s shift →
//! [`compute_norm_stats`] / [`apply_zscore`]. Windowed corpora round-trip
//! through a self-describing binary container (see [`container`]).

mod container;
mod loader;
pub mod pickle;

pub use container::{export_container, import_container, import_container_bytes};
pub use loader::{discover_archives, load_subject, resample_recording};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of fused channels: PPG plus the three accelerometer axes.
pub const NUM_CHANNELS: usize = 4;
/// Working sample rate after ingestion, Hz.
pub const WORKING_FS: f64 = 32.0;
/// Window length in seconds.
pub const WINDOW_S: f64 = 8.0;
/// Window shift in seconds.
pub const SHIFT_S: f64 = 2.0;
/// Samples per window at the working rate.
pub const WINDOW_LEN: usize = (WINDOW_S * WORKING_FS) as usize;

pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = ["ppg", "acc_x", "acc_y", "acc_z"];

/// Which vendor archive layout a recording came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Dalia,
    Wesad,
    Unlabeled,
}

impl std::str::FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dalia" => Ok(Source::Dalia),
            "wesad" => Ok(Source::Wesad),
            "unlabeled" => Ok(Source::Unlabeled),
            other => Err(Error::argument(format!("unknown source kind `{other}`"))),
        }
    }
}

/// Raw multi-rate streams for one subject, straight from the vendor archive.
#[derive(Debug, Clone)]
pub struct SubjectRecording {
    pub subject_id: String,
    /// One-channel PPG and its native sample rate in Hz.
    pub ppg: Vec<f64>,
    pub ppg_fs: f64,
    /// Tri-axial accelerometer channels, all at `acc_fs`.
    pub acc_x: Vec<f64>,
    pub acc_y: Vec<f64>,
    pub acc_z: Vec<f64>,
    pub acc_fs: f64,
    /// Ground-truth BPM per 8 s window at 2 s shift, when the dataset ships one.
    pub hr_labels: Option<Vec<f64>>,
    pub source: Source,
}

impl SubjectRecording {
    /// Checks the structural invariants; called by the loaders.
    pub fn validate(&self) -> Result<()> {
        if self.acc_x.len() != self.acc_y.len() || self.acc_x.len() != self.acc_z.len() {
            return Err(Error::load(format!(
                "accelerometer channels of subject {} have differing lengths ({}, {}, {})",
                self.subject_id,
                self.acc_x.len(),
                self.acc_y.len(),
                self.acc_z.len()
            )));
        }
        if let Some(labels) = &self.hr_labels {
            for &bpm in labels {
                if !bpm.is_finite() || bpm <= 20.0 || bpm >= 250.0 {
                    return Err(Error::load(format!(
                        "subject {}: HR label {bpm} outside (20, 250) BPM",
                        self.subject_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Recording duration in seconds, limited by the shortest stream.
    pub fn duration_s(&self) -> f64 {
        let ppg_s = self.ppg.len() as f64 / self.ppg_fs;
        let acc_s = self.acc_x.len() as f64 / self.acc_fs;
        ppg_s.min(acc_s)
    }
}

/// One 4×256 window at 32 Hz. Channel order: PPG, ACC_x, ACC_y, ACC_z.
#[derive(Debug, Clone)]
pub struct SignalWindow {
    pub data: Array2<f32>,
    pub subject_id: String,
    pub label: Option<f64>,
}

impl SignalWindow {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Where a set of normalization statistics was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PretrainCorpus,
    TrainSplit,
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; NUM_CHANNELS],
    pub std: [f64; NUM_CHANNELS],
    pub provenance: Provenance,
}

/// A windowed corpus, possibly normalized.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub windows: Vec<SignalWindow>,
    pub stats: Option<NormStats>,
    pub normalized: bool,
}

impl Default for WindowedDataset {
    fn default() -> Self {
        WindowedDataset { windows: Vec::new(), stats: None, normalized: false }
    }
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }
    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subject_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        for w in &self.windows {
            if !ids.contains(&w.subject_id) {
                ids.push(w.subject_id.clone());
            }
        }
        ids
    }

    /// Merge several corpora into one (stats and the normalized flag must agree).
    pub fn concat(parts: Vec<WindowedDataset>) -> Result<WindowedDataset> {
        let mut out = WindowedDataset::default();
        for (i, part) in parts.into_iter().enumerate() {
            if i == 0 {
                out.normalized = part.normalized;
                out.stats = part.stats.clone();
            } else if part.normalized != out.normalized {
                return Err(Error::state("cannot concat normalized with unnormalized data"));
            }
            out.windows.extend(part.windows);
        }
        Ok(out)
    }
}

/// Expected window count for a stream of `duration_s` seconds.
pub fn window_count(duration_s: f64) -> usize {
    if duration_s < WINDOW_S {
        0
    } else {
        ((duration_s - WINDOW_S) / SHIFT_S).floor() as usize + 1
    }
}

/// Cut a recording (already at `fs` on every stream) into windows.
///
/// Labels, when present, are aligned index-for-index with the produced window
/// sequence; a tail mismatch is resolved by truncating to the shorter of the
/// two sequences.
pub fn segment_windows(rec: &SubjectRecording, fs: f64) -> Result<WindowedDataset> {
    if (rec.ppg_fs - fs).abs() > 1e-9 || (rec.acc_fs - fs).abs() > 1e-9 {
        return Err(Error::argument(format!(
            "segment_windows expects every stream at {fs} Hz, got ppg={} acc={}",
            rec.ppg_fs, rec.acc_fs
        )));
    }
    let win = (WINDOW_S * fs).round() as usize;
    let shift = (SHIFT_S * fs).round() as usize;
    let len = rec.ppg.len().min(rec.acc_x.len());
    if len < win {
        log::warn!(
            "subject {}: recording shorter than one window ({len} < {win} samples); empty dataset",
            rec.subject_id
        );
        return Ok(WindowedDataset::default());
    }

    let mut count = (len - win) / shift + 1;
    if let Some(labels) = &rec.hr_labels {
        if labels.len() != count {
            log::warn!(
                "subject {}: {} labels vs {} windows; truncating to the shorter",
                rec.subject_id,
                labels.len(),
                count
            );
        }
        count = count.min(labels.len());
    }

    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * shift;
        let mut data = Array2::<f32>::zeros((NUM_CHANNELS, win));
        for (c, stream) in [&rec.ppg, &rec.acc_x, &rec.acc_y, &rec.acc_z]
            .into_iter()
            .enumerate()
        {
            for t in 0..win {
                data[[c, t]] = stream[start + t] as f32;
            }
        }
        windows.push(SignalWindow {
            data,
            subject_id: rec.subject_id.clone(),
            label: rec.hr_labels.as_ref().map(|l| l[w]),
        });
    }
    Ok(WindowedDataset { windows, stats: None, normalized: false })
}

/// Per-channel mean/std over every sample of every window in `datasets`.
///
/// A zero-variance channel gets `std = 1` with a warning instead of failing:
/// unlabeled corpora may contain flat segments.
pub fn compute_norm_stats(datasets: &[&WindowedDataset], provenance: Provenance) -> Result<NormStats> {
    let total: usize = datasets.iter().map(|d| d.len()).sum();
    if total == 0 {
        return Err(Error::argument("compute_norm_stats needs at least one window"));
    }
    let mut sum = [0.0f64; NUM_CHANNELS];
    let mut sum_sq = [0.0f64; NUM_CHANNELS];
    let mut n = 0usize;
    for ds in datasets {
        for w in &ds.windows {
            for c in 0..NUM_CHANNELS {
                for &v in w.data.row(c) {
                    sum[c] += v as f64;
                    sum_sq[c] += (v as f64) * (v as f64);
                }
            }
            n += w.data.ncols();
        }
    }
    let mut mean = [0.0; NUM_CHANNELS];
    let mut std = [0.0; NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        mean[c] = sum[c] / n as f64;
        let var = (sum_sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
        std[c] = var.sqrt();
        if std[c] <= 0.0 {
            log::warn!("channel {} ({}) has zero variance; using std = 1", c, CHANNEL_NAMES[c]);
            std[c] = 1.0;
        }
    }
    Ok(NormStats { mean, std, provenance })
}

/// Map every window channel through `(x - mean[c]) / std[c]`. Labels untouched.
pub fn apply_zscore(ds: &WindowedDataset, stats: &NormStats) -> Result<WindowedDataset> {
    if ds.normalized {
        return Err(Error::state("dataset already normalized"));
    }
    let mut out = ds.clone();
    for w in &mut out.windows {
        for c in 0..NUM_CHANNELS {
            let mean = stats.mean[c];
            let inv = 1.0 / stats.std[c];
            for v in w.data.row_mut(c) {
                *v = ((*v as f64 - mean) * inv) as f32;
            }
        }
    }
    out.normalized = true;
    out.stats = Some(stats.clone());
    Ok(out)
}

/// Inverse of [`apply_zscore`].
pub fn invert_zscore(ds: &WindowedDataset) -> Result<WindowedDataset> {
    if !ds.normalized {
        return Err(Error::state("dataset is not normalized"));
    }
    let stats = ds
        .stats
        .as_ref()
        .ok_or_else(|| Error::state("normalized dataset lacks stats"))?
        .clone();
    let mut out = ds.clone();
    for w in &mut out.windows {
        for c in 0..NUM_CHANNELS {
            for v in w.data.row_mut(c) {
                *v = (*v as f64 * stats.std[c] + stats.mean[c]) as f32;
            }
        }
    }
    out.normalized = false;
    out.stats = None;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn synth_recording(subject: &str, seconds: f64, labeled: bool) -> SubjectRecording {
        let n = (seconds * WORKING_FS) as usize;
        let tone = |f: f64, i: usize| (2.0 * std::f64::consts::PI * f * i as f64 / WORKING_FS).sin();
        let count = window_count(seconds);
        SubjectRecording {
            subject_id: subject.to_string(),
            ppg: (0..n).map(|i| tone(1.3, i)).collect(),
            ppg_fs: WORKING_FS,
            acc_x: (0..n).map(|i| 0.2 * tone(0.7, i)).collect(),
            acc_y: (0..n).map(|i| 0.1 * tone(2.1, i)).collect(),
            acc_z: vec![0.5; n],
            acc_fs: WORKING_FS,
            hr_labels: labeled.then(|| vec![78.0; count]),
            source: if labeled { Source::Dalia } else { Source::Unlabeled },
        }
    }

    #[test]
    fn window_count_examples() {
        assert_eq!(window_count(600.0), 297);
        assert_eq!(window_count(8.0), 1);
        assert_eq!(window_count(7.9), 0);
    }

    #[test]
    fn segments_match_count_formula() {
        let rec = synth_recording("s1", 600.0, true);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        assert_eq!(ds.len(), 297);
        assert!(ds.windows.iter().all(|w| w.data.dim() == (4, 256)));
        assert!(ds.windows.iter().all(|w| w.label == Some(78.0)));
    }

    #[test]
    fn short_recording_yields_empty_dataset() {
        let rec = synth_recording("s1", 4.0, false);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn label_mismatch_truncates() {
        let mut rec = synth_recording("s1", 60.0, true);
        let full = window_count(60.0);
        rec.hr_labels = Some(vec![70.0; full - 2]);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        assert_eq!(ds.len(), full - 2);
    }

    #[test]
    fn norm_stats_symmetric_channel() {
        // Channel 0 alternating -1/+1 -> mean 0, std 1.
        let mut rec = synth_recording("s1", 16.0, false);
        let n = rec.ppg.len();
        rec.ppg = (0..n).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let stats = compute_norm_stats(&[&ds], Provenance::PretrainCorpus).unwrap();
        assert!(stats.mean[0].abs() < 1e-9);
        assert!((stats.std[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_channel_falls_back_to_unit_std() {
        let mut rec = synth_recording("s1", 16.0, false);
        rec.acc_y = vec![0.0; rec.acc_y.len()];
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let stats = compute_norm_stats(&[&ds], Provenance::PretrainCorpus).unwrap();
        assert_eq!(stats.mean[2], 0.0);
        assert_eq!(stats.std[2], 1.0);
    }

    #[test]
    fn zscore_recenters_the_corpus() {
        let rec = synth_recording("s1", 120.0, false);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let stats = compute_norm_stats(&[&ds], Provenance::PretrainCorpus).unwrap();
        let normed = apply_zscore(&ds, &stats).unwrap();
        let check = compute_norm_stats(&[&normed], Provenance::PretrainCorpus).unwrap();
        for c in 0..NUM_CHANNELS {
            assert!(check.mean[c].abs() < 1e-6, "mean[{c}] = {}", check.mean[c]);
            assert!((check.std[c] - 1.0).abs() < 1e-6, "std[{c}] = {}", check.std[c]);
        }
    }

    #[test]
    fn zscore_identity_stats_is_identity() {
        let rec = synth_recording("s1", 16.0, true);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let stats = NormStats {
            mean: [0.0; 4],
            std: [1.0; 4],
            provenance: Provenance::TrainSplit,
        };
        let normed = apply_zscore(&ds, &stats).unwrap();
        for (a, b) in ds.windows.iter().zip(&normed.windows) {
            assert_eq!(a.data, b.data);
            assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn double_normalization_is_rejected() {
        let rec = synth_recording("s1", 16.0, false);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let stats = compute_norm_stats(&[&ds], Provenance::PretrainCorpus).unwrap();
        let normed = apply_zscore(&ds, &stats).unwrap();
        let err = apply_zscore(&normed, &stats).unwrap_err();
        assert!(err.to_string().contains("already normalized"));
    }

    #[test]
    fn normalization_round_trips() {
        let rec = synth_recording("s1", 60.0, true);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let stats = compute_norm_stats(&[&ds], Provenance::TrainSplit).unwrap();
        let normed = apply_zscore(&ds, &stats).unwrap();
        let back = invert_zscore(&normed).unwrap();
        for (a, b) in ds.windows.iter().zip(&back.windows) {
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                let rel = (x - y).abs() / x.abs().max(1.0);
                assert!(rel < 1e-6);
            }
            assert_eq!(a.label, b.label);
        }
    }
}

//! Vendor archive loaders.
//!
//! All three supported sources ship one pickle per subject with the wrist
//! modality under `signal.wrist`: `BVP` (one-channel PPG, 64 Hz) and `ACC`
//! (N×3 tri-axial accelerometer, 32 Hz), the Empatica E4 layout. The labeled
//! source additionally carries a `label` array of per-window BPM ground truth.

use std::path::Path;

use super::pickle::{self, Value};
use super::{Source, SubjectRecording};
use crate::error::{Error, Result};
use crate::signal::resample;

/// Native PPG sample rate of the wrist archives, Hz.
pub const NATIVE_PPG_FS: f64 = 64.0;
/// Native accelerometer sample rate, Hz.
pub const NATIVE_ACC_FS: f64 = 32.0;

/// Load one subject's archive in the dataset's native serialization.
///
/// Streams come back at their original sample rates. Only the labeled
/// source returns `hr_labels`; affect labels and other modalities are
/// ignored.
pub fn load_subject(path: &Path, source: Source) -> Result<SubjectRecording> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::load(format!("cannot read {}: {e}", path.display())))?;
    let root = pickle::parse(&bytes)
        .map_err(|e| Error::load(format!("{}: corrupt archive: {e}", path.display())))?;

    let subject_id = root
        .get("subject")
        .and_then(|v| match v {
            Value::Str(s) => Some(s.clone()),
            Value::Bytes(b) => Some(String::from_utf8_lossy(b).into_owned()),
            _ => None,
        })
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "unknown".to_string())
        });

    let signal = root
        .get("signal")
        .ok_or_else(|| Error::load("missing field signal"))?;
    let wrist = signal
        .get("wrist")
        .ok_or_else(|| Error::load("missing field signal.wrist"))?;

    let ppg = match wrist.get("BVP").and_then(Value::as_array) {
        Some(a) if !a.is_empty() => a.flat(),
        _ => return Err(Error::load("missing channel ppg")),
    };

    let acc = wrist.get("ACC").and_then(Value::as_array);
    let (acc_x, acc_y, acc_z) = match acc {
        None => return Err(Error::load("missing channel acc_x")),
        Some(a) => split_acc(a)?,
    };

    let hr_labels = match source {
        Source::Dalia => {
            let labels = root
                .get("label")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::load("missing field label"))?;
            Some(labels.flat())
        }
        Source::Wesad | Source::Unlabeled => None,
    };

    let rec = SubjectRecording {
        subject_id,
        ppg,
        ppg_fs: NATIVE_PPG_FS,
        acc_x,
        acc_y,
        acc_z,
        acc_fs: NATIVE_ACC_FS,
        hr_labels,
        source,
    };
    rec.validate()?;
    Ok(rec)
}

fn split_acc(a: &pickle::NdArray) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if a.ndim() == 2 && a.shape[1] == 3 {
        Ok((
            a.column(0).unwrap(),
            a.column(1).unwrap(),
            a.column(2).unwrap(),
        ))
    } else if a.ndim() == 2 && a.shape[0] == 3 {
        // transposed layout: three rows of N samples
        let n = a.shape[1];
        let get_row = |r: usize| a.data[r * n..(r + 1) * n].to_vec();
        Ok((get_row(0), get_row(1), get_row(2)))
    } else {
        Err(Error::load(format!(
            "accelerometer array must be N×3, got shape {:?}",
            a.shape
        )))
    }
}

/// Bring every stream of a recording to `fs` Hz.
pub fn resample_recording(rec: &SubjectRecording, fs: f64) -> Result<SubjectRecording> {
    Ok(SubjectRecording {
        subject_id: rec.subject_id.clone(),
        ppg: resample(&rec.ppg, rec.ppg_fs, fs)?,
        ppg_fs: fs,
        acc_x: resample(&rec.acc_x, rec.acc_fs, fs)?,
        acc_y: resample(&rec.acc_y, rec.acc_fs, fs)?,
        acc_z: resample(&rec.acc_z, rec.acc_fs, fs)?,
        acc_fs: fs,
        hr_labels: rec.hr_labels.clone(),
        source: rec.source,
    })
}

/// Find subject archives under `dir`: `*.pkl` either at the top level or one
/// directory down (the layout the vendor zips unpack to).
pub fn discover_archives(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut found = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::load(format!("cannot list {}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().map(|e| e == "pkl").unwrap_or(false) {
            found.push(path);
        } else if path.is_dir() {
            for sub in std::fs::read_dir(&path)? {
                let sub = sub?.path();
                if sub.extension().map(|e| e == "pkl").unwrap_or(false) {
                    found.push(sub);
                }
            }
        }
    }
    found.sort();
    Ok(found)
}

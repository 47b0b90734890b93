//! Neutral windowed-corpus container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"PPGW"
//! version  u16    (currently 1)
//! hdr_len  u32
//! header   JSON (self-describing: channels, rate, subjects, stats, counts)
//! payload  subject index  n_windows × u32
//!          labels         n_windows × f32   (only when has_labels; NaN = none)
//!          windows        n_windows × 4 × 256 × f32
//! ```
//!
//! Window samples are stored as raw little-endian f32, so export → import is
//! value-exact. Files are written to a temp sibling and renamed into place.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{NormStats, SignalWindow, WindowedDataset, CHANNEL_NAMES, NUM_CHANNELS, WINDOW_LEN, WORKING_FS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PPGW";
const VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    fs: f64,
    channels: Vec<String>,
    subjects: Vec<String>,
    n_windows: u64,
    win_len: u32,
    has_labels: bool,
    normalized: bool,
    stats: Option<NormStats>,
}

/// Serialize a windowed corpus to `path` (atomically).
pub fn export_container(ds: &WindowedDataset, path: &Path) -> Result<()> {
    let subjects = ds.subject_ids();
    let subject_idx: Vec<u32> = ds
        .windows
        .iter()
        .map(|w| subjects.iter().position(|s| *s == w.subject_id).unwrap() as u32)
        .collect();
    let has_labels = ds.windows.iter().any(|w| w.label.is_some());

    let header = Header {
        fs: WORKING_FS,
        channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        subjects,
        n_windows: ds.len() as u64,
        win_len: WINDOW_LEN as u32,
        has_labels,
        normalized: ds.normalized,
        stats: ds.stats.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::format(format!("container header: {e}")))?;

    let tmp = path.with_extension("ppgw.tmp");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&(header_json.len() as u32).to_le_bytes())?;
    f.write_all(&header_json)?;

    let mut buf = Vec::with_capacity(ds.len() * 4);
    for idx in &subject_idx {
        buf.extend_from_slice(&idx.to_le_bytes());
    }
    if has_labels {
        for w in &ds.windows {
            let v = w.label.map(|l| l as f32).unwrap_or(f32::NAN);
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for w in &ds.windows {
        for &v in w.data.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&buf)?;
    f.sync_all()?;
    drop(f);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a container back. Import is the exact inverse of export.
pub fn import_container(path: &Path) -> Result<WindowedDataset> {
    let mut f = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes)?;
    import_container_bytes(&bytes)
}

/// Decode a container from a byte buffer (fuzz-target entry point).
pub fn import_container_bytes(bytes: &[u8]) -> Result<WindowedDataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::format("bad magic: not a windowed-corpus container"));
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let hdr_len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
    let header_bytes = cur.take(hdr_len)?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(format!("container header: {e}")))?;

    if header.win_len as usize != WINDOW_LEN || header.channels.len() != NUM_CHANNELS {
        return Err(Error::format(format!(
            "unsupported geometry: {} channels × {} samples",
            header.channels.len(),
            header.win_len
        )));
    }
    let n = usize::try_from(header.n_windows).map_err(|_| Error::format("window count overflow"))?;
    let per_window = NUM_CHANNELS * WINDOW_LEN;
    let expected = n
        .checked_mul(4)
        .and_then(|idx| {
            let labels = if header.has_labels { n * 4 } else { 0 };
            n.checked_mul(per_window * 4).map(|w| idx + labels + w)
        })
        .ok_or_else(|| Error::format("container size overflow"))?;
    if cur.remaining() != expected {
        return Err(Error::format(format!(
            "truncated or padded container: {} payload bytes, expected {expected}",
            cur.remaining()
        )));
    }

    let mut subject_idx = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        if raw >= header.subjects.len() {
            return Err(Error::format("subject index out of range"));
        }
        subject_idx.push(raw);
    }
    let mut labels = Vec::with_capacity(n);
    if header.has_labels {
        for _ in 0..n {
            let v = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
            labels.push(if v.is_nan() { None } else { Some(v as f64) });
        }
    } else {
        labels.resize(n, None);
    }

    let mut windows = Vec::with_capacity(n);
    for i in 0..n {
        let raw = cur.take(per_window * 4)?;
        let mut data = Array2::<f32>::zeros((NUM_CHANNELS, WINDOW_LEN));
        for (j, chunk) in raw.chunks_exact(4).enumerate() {
            data[[j / WINDOW_LEN, j % WINDOW_LEN]] =
                f32::from_le_bytes(chunk.try_into().unwrap());
        }
        windows.push(SignalWindow {
            data,
            subject_id: header.subjects[subject_idx[i]].clone(),
            label: labels[i],
        });
    }

    if header.normalized && header.stats.is_none() {
        return Err(Error::format("normalized container lacks stats"));
    }
    Ok(WindowedDataset { windows, stats: header.stats, normalized: header.normalized })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| Error::format("container length overflow"))?;
        if end > self.bytes.len() {
            return Err(Error::format("truncated container"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::synth_recording;
    use super::super::{apply_zscore, compute_norm_stats, segment_windows, Provenance, WORKING_FS};
    use super::*;

    #[test]
    fn round_trip_is_bitwise_exact() {
        let rec = synth_recording("s1", 60.0, true);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let stats = compute_norm_stats(&[&ds], Provenance::TrainSplit).unwrap();
        let ds = apply_zscore(&ds, &stats).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.ppgw");
        export_container(&ds, &path).unwrap();
        let back = import_container(&path).unwrap();

        assert_eq!(back.len(), ds.len());
        assert_eq!(back.normalized, ds.normalized);
        assert_eq!(back.stats, ds.stats);
        for (a, b) in ds.windows.iter().zip(&back.windows) {
            assert_eq!(a.subject_id, b.subject_id);
            assert_eq!(a.label, b.label);
            assert!(a
                .data
                .iter()
                .zip(b.data.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let err = import_container_bytes(b"NOPE....").unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncation_is_rejected() {
        let rec = synth_recording("s1", 20.0, false);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppgw");
        export_container(&ds, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 7];
        assert!(import_container_bytes(cut).is_err());
    }

    #[test]
    fn reports_window_count() {
        let rec = synth_recording("s1", 30.0, false);
        let ds = segment_windows(&rec, WORKING_FS).unwrap();
        let n = ds.len();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.ppgw");
        export_container(&ds, &path).unwrap();
        assert_eq!(import_container(&path).unwrap().len(), n);
    }
}

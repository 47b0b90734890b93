//! Checkpoint container and encoder weight transfer.
//!
//! Layout mirrors the dataset container: `PPGK` magic, version, JSON header
//! (config, training metadata, normalization stats, array directory), then
//! raw little-endian f64 array data in directory order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::NormStats;
use crate::nn::ParamStore;

use super::estimator::Estimator;
use super::{ModelConfig, Variant};

const MAGIC: &[u8; 4] = b"PPGK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Epoch the stored weights come from (best validation epoch).
    pub epoch: usize,
    /// Best validation metric observed when the snapshot was taken.
    pub best_val: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    stats: Option<NormStats>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

/// Serialized model weights plus the config and stats they belong to.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    /// Normalization statistics the model was trained under.
    pub stats: Option<NormStats>,
    arrays: Vec<(String, ArrayD<f64>)>,
}

impl Checkpoint {
    pub fn from_params(
        config: &ModelConfig,
        meta: CheckpointMeta,
        stats: Option<NormStats>,
        ps: &ParamStore,
    ) -> Self {
        let arrays = ps.iter().map(|(n, v)| (n.to_string(), v.clone())).collect();
        Checkpoint { config: config.clone(), meta, stats, arrays }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    /// Restore every parameter of `ps` by name; the name sets must match
    /// exactly and shapes must agree.
    pub fn load_into(&self, ps: &mut ParamStore) -> Result<()> {
        if ps.len() != self.arrays.len() {
            return Err(Error::format(format!(
                "checkpoint holds {} arrays, model has {} parameters",
                self.arrays.len(),
                ps.len()
            )));
        }
        for id in ps.ids().collect::<Vec<_>>() {
            let name = ps.name(id).to_string();
            let src = self
                .get(&name)
                .ok_or_else(|| Error::format(format!("checkpoint lacks array `{name}`")))?;
            if src.shape() != ps.value(id).shape() {
                return Err(Error::format(format!(
                    "array `{name}` shape {:?} does not fit slot {:?}",
                    src.shape(),
                    ps.value(id).shape()
                )));
            }
            ps.value_mut(id).assign(src);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            meta: self.meta.clone(),
            stats: self.stats.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, v)| ArrayEntry { name: n.clone(), shape: v.shape().to_vec() })
                .collect(),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| Error::format(format!("checkpoint header: {e}")))?;

        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(header_json.len() as u32).to_le_bytes())?;
        f.write_all(&header_json)?;
        for (_, v) in &self.arrays {
            let mut buf = Vec::with_capacity(v.len() * 8);
            for &x in v.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            f.write_all(&buf)?;
        }
        f.sync_all()?;
        drop(f);
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Decode a checkpoint from a byte buffer (fuzz-target entry point).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).ok_or_else(|| Error::format("length overflow"))?;
            if end > bytes.len() {
                return Err(Error::format("truncated checkpoint"));
            }
            let s = &bytes[*pos..end];
            *pos = end;
            Ok(s)
        };

        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::format("bad magic: not a checkpoint"));
        }
        let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let hdr_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(&mut pos, hdr_len)?)
            .map_err(|e| Error::format(format!("checkpoint header: {e}")))?;

        let mut arrays = Vec::with_capacity(header.arrays.len().min(4096));
        for entry in &header.arrays {
            let count = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format("array size overflow"))?;
            let nbytes = count.checked_mul(8).ok_or_else(|| Error::format("array size overflow"))?;
            let raw = take(&mut pos, nbytes)?;
            let mut data = Vec::with_capacity(count);
            for chunk in raw.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&entry.shape), data)
                .map_err(|e| Error::format(format!("array `{}`: {e}", entry.name)))?;
            arrays.push((entry.name.clone(), arr));
        }
        if pos != bytes.len() {
            return Err(Error::format("trailing bytes after checkpoint payload"));
        }
        Ok(Checkpoint { config: header.config, meta: header.meta, stats: header.stats, arrays })
    }
}

/// Initialize an estimator from a pre-trained autoencoder checkpoint.
///
/// Every `encoder.*` weight is copied exactly; the regression head keeps the
/// fresh fan-in-uniform initialization derived from `head_seed`. Encoder
/// geometry must match; the error lists every differing config field.
pub fn transfer_encoder_weights(
    src: &Checkpoint,
    dst_cfg: &ModelConfig,
    head_seed: u64,
) -> Result<Estimator> {
    let dst_cfg = dst_cfg.clone().estimator();
    let mismatched: Vec<String> = src
        .config
        .encoder_fields()
        .iter()
        .zip(dst_cfg.encoder_fields().iter())
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.to_string())
        .collect();
    if !mismatched.is_empty() {
        return Err(Error::Incompatible(mismatched));
    }
    if src.config.variant != Variant::Autoencoder {
        return Err(Error::Incompatible(vec!["variant".to_string()]));
    }

    let mut est = Estimator::build(&dst_cfg, head_seed)?;
    let ids: Vec<_> = est.params.ids().collect();
    for id in ids {
        let name = est.params.name(id).to_string();
        if !name.starts_with("encoder.") {
            continue;
        }
        let src_arr = src
            .get(&name)
            .ok_or_else(|| Error::Incompatible(vec![format!("missing array {name}")]))?;
        if src_arr.shape() != est.params.value(id).shape() {
            return Err(Error::Incompatible(vec![format!("shape of {name}")]));
        }
        est.params.value_mut(id).assign(src_arr);
    }
    Ok(est)
}

//! Binary checkpoint: magic, version, JSON header, raw f32 blobs.
//!
//! ```text
//! "EMOCKPT1" | u32 LE version | u64 LE header length | header JSON |
//! parameters (f32 LE, header order) | running mean/var per BN layer
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BnState, EmotionClassifier, Param, ParamGroup, Pooling, ResNetConfig};
use crate::tensor::{BatchNormConfig, RunningStats, Tensor};

const MAGIC: &[u8; 8] = b"EMOCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Free-form provenance stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// `speaker` or `emotion`.
    pub task: String,
    /// Class names in logit order.
    pub labels: Vec<String>,
    pub epochs: u32,
    pub seed: u64,
    #[serde(default)]
    pub frontend: Option<crate::dsp::FrontendConfig>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BnEntry {
    name: String,
    channels: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ResNetConfig,
    pooling: Pooling,
    n_classes: usize,
    bn_config: BatchNormConfig,
    params: Vec<ParamEntry>,
    batch_norm: Vec<BnEntry>,
    meta: TrainingMeta,
}

pub fn encode_checkpoint(model: &EmotionClassifier, meta: &TrainingMeta) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config().clone(),
        pooling: model.pooling(),
        n_classes: model.n_classes(),
        bn_config: model.bn_config(),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        batch_norm: model
            .bn_states()
            .iter()
            .map(|b| BnEntry {
                name: b.name.clone(),
                channels: b.stats.mean.len(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Config(format!("checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(20 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |vals: &[f32]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    for p in model.params() {
        put(p.value.data());
    }
    for b in model.bn_states() {
        put(&b.stats.mean);
        put(&b.stats.var);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "{}: needed {n} bytes at offset {}, file has {}",
                self.what,
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Truncated(self.what.into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Decodes a checkpoint. With `expected`, the stored architecture must equal
/// it exactly.
pub fn decode_checkpoint(
    bytes: &[u8],
    what: &str,
    expected: Option<&ResNetConfig>,
) -> Result<(EmotionClassifier, TrainingMeta)> {
    let mut r = Reader { bytes, pos: 0, what };
    let magic = r.take(8).map_err(|_| Error::BadMagic(what.into()))?;
    if magic != MAGIC {
        return Err(Error::BadMagic(what.into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let json = r.take(usize::try_from(len).map_err(|_| Error::Truncated(what.into()))?)?;
    let header: Header = serde_json::from_slice(json)
        .map_err(|e| Error::CheckpointMismatch(format!("{what}: unreadable header: {e}")))?;
    if let Some(want) = expected {
        if want != &header.config {
            return Err(Error::CheckpointMismatch(format!(
                "{what}: stored architecture {:?} differs from expected {want:?}",
                header.config
            )));
        }
    }
    let mut params = Vec::with_capacity(header.params.len());
    for entry in header.params {
        let n = entry.shape.iter().product();
        let value = Tensor::new(entry.shape, r.floats(n)?)?;
        params.push(Param {
            name: entry.name,
            group: entry.group,
            value,
        });
    }
    let mut bn_states = Vec::with_capacity(header.batch_norm.len());
    for entry in header.batch_norm {
        let mean = r.floats(entry.channels)?;
        let var = r.floats(entry.channels)?;
        bn_states.push(BnState {
            name: entry.name,
            stats: RunningStats { mean, var },
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::CheckpointMismatch(format!(
            "{what}: {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let model = EmotionClassifier::from_parts(
        header.config,
        header.pooling,
        header.n_classes,
        params,
        bn_states,
        header.bn_config,
    )?;
    Ok((model, header.meta))
}

pub fn save_checkpoint(path: &Path, model: &EmotionClassifier, meta: &TrainingMeta) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<&ResNetConfig>) -> Result<(EmotionClassifier, TrainingMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string(), expected)
}

//! Binary checkpoint container: magic, version, JSON header, raw f32 blobs.
//!
//! Layout: `HDRBCKPT` | u32 LE version | u32 LE header length | header JSON |
//! little-endian f32 data for every tensor listed in the header, in order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, ModelWeights, NetConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HDRBCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    net_config: NetConfig,
    seed: u64,
    step: u64,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extra: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// In-memory checkpoint: model configuration, named arrays and free-form extra state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub seed: u64,
    pub step: u64,
    pub tensors: BTreeMap<String, NamedTensor>,
    pub extra: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelWeights<f32>, step: u64) -> Self {
        let mut m = model.clone();
        let mut tensors = BTreeMap::new();
        for (name, p) in m.params_mut() {
            tensors.insert(
                name,
                NamedTensor {
                    shape: p.shape.clone(),
                    data: p.value.clone(),
                },
            );
        }
        for (name, b) in m.buffers_mut() {
            tensors.insert(
                name,
                NamedTensor {
                    shape: vec![b.len()],
                    data: b.clone(),
                },
            );
        }
        Checkpoint {
            config: model.config.clone(),
            seed: model.seed,
            step,
            tensors,
            extra: None,
        }
    }

    /// Rebuild the model and copy every stored parameter and buffer into it.
    pub fn to_model(&self) -> Result<ModelWeights<f32>> {
        let mut model = build_model::<f32>(&self.config, self.seed)?;
        for (name, p) in model.params_mut() {
            let t = self.get(&name)?;
            if t.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: stored shape {:?}, model expects {:?}",
                    t.shape, p.shape
                )));
            }
            p.value.copy_from_slice(&t.data);
        }
        for (name, b) in model.buffers_mut() {
            let t = self.get(&name)?;
            if t.data.len() != b.len() {
                return Err(Error::Checkpoint(format!("buffer {name}: length mismatch")));
            }
            b.copy_from_slice(&t.data);
        }
        Ok(model)
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.data.len(),
            });
            offset += t.data.len();
        }
        let header = Header {
            net_config: self.config.clone(),
            seed: self.seed,
            step: self.step,
            tensors: entries,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body_start = 16 + hlen;
        if bytes.len() < body_start {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let body = &bytes[body_start..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Checkpoint(format!("tensor {}: shape/length mismatch", e.name)));
            }
            let (start, end) = (e.offset * 4, (e.offset + e.len) * 4);
            let raw = body
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past end of file", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(e.name, NamedTensor { shape: e.shape, data });
        }
        Ok(Checkpoint {
            config: header.net_config,
            seed: header.seed,
            step: header.step,
            tensors,
            extra: header.extra,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = crate::io::create_file(path)?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

//! Checkpoint container: 8-byte magic, little-endian `u32` format version,
//! `u64` header length, a JSON header (config, vocab hash, dtype, tensor
//! table, metadata), then the raw little-endian tensor data.

use super::{Model, ModelConfig, ModelError};
use crate::numeric::{Real, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NAMEREC\0";
const M_PREFIX: &str = "optimizer.m.";
const V_PREFIX: &str = "optimizer.v.";

/// Adam moments, one per parameter, plus the number of updates applied.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        OptimizerState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub dtype: String,
    /// Optimizer updates applied so far.
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub model: Model<T>,
    pub vocab_hash: String,
    pub step: u64,
    pub optimizer: Option<OptimizerState<T>>,
    pub metadata: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl<T: Real> Checkpoint<T> {
    pub fn new(model: Model<T>, vocab_hash: impl Into<String>) -> Self {
        Checkpoint {
            model,
            vocab_hash: vocab_hash.into(),
            step: 0,
            optimizer: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        let mut push = |name: String, t: &Tensor<T>| {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: data.len(),
            });
            for &x in t.data() {
                x.write_le(&mut data);
            }
        };
        for (s, t) in self.model.specs().iter().zip(self.model.params()) {
            push(s.name.clone(), t);
        }
        if let Some(opt) = &self.optimizer {
            for (s, (m, v)) in self.model.specs().iter().zip(opt.m.iter().zip(&opt.v)) {
                push(format!("{M_PREFIX}{}", s.name), m);
                push(format!("{V_PREFIX}{}", s.name), v);
            }
        }
        let mut metadata = self.metadata.clone();
        if let Some(opt) = &self.optimizer {
            metadata.insert("optimizer.step".into(), opt.step.to_string());
        }
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            config: self.model.config().clone(),
            vocab_hash: self.vocab_hash.clone(),
            dtype: T::DTYPE.to_string(),
            step: self.step,
            tensors,
            metadata,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(20 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    /// Write to a temporary file in the target directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&self.to_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| ModelError::Io(e.error))?;
        Ok(())
    }

    /// Parse a checkpoint, converting stored values to `T` when the file
    /// uses a different precision. Does not check the vocabulary.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (header, data) = split_header(bytes)?;
        let width = match header.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(bad(format!("unknown dtype {other}"))),
        };
        let mut named: HashMap<String, Tensor<T>> = HashMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset + n * width;
            let raw = data
                .get(e.offset..end)
                .ok_or_else(|| bad(format!("tensor {} runs past the end of the file", e.name)))?;
            let values = raw
                .chunks_exact(width)
                .map(|c| {
                    if width == T::BYTES {
                        T::read_le(c)
                    } else if width == 4 {
                        T::from_f64(f32::read_le(c) as f64)
                    } else {
                        T::from_f64(f64::read_le(c))
                    }
                })
                .collect();
            if named.insert(e.name.clone(), Tensor::from_vec(&e.shape, values)).is_some() {
                return Err(bad(format!("tensor {} listed twice", e.name)));
            }
        }
        let mut m = HashMap::new();
        let mut v = HashMap::new();
        named.retain(|name, t| {
            if let Some(base) = name.strip_prefix(M_PREFIX) {
                m.insert(base.to_string(), t.clone());
                false
            } else if let Some(base) = name.strip_prefix(V_PREFIX) {
                v.insert(base.to_string(), t.clone());
                false
            } else {
                true
            }
        });
        let model = Model::from_named(header.config.clone(), named)?;
        let optimizer = if m.is_empty() && v.is_empty() {
            None
        } else {
            let mut ms = Vec::new();
            let mut vs = Vec::new();
            for s in model.specs() {
                let get = |map: &mut HashMap<String, Tensor<T>>| {
                    map.remove(&s.name)
                        .filter(|t| t.shape() == s.shape.as_slice())
                        .ok_or_else(|| bad(format!("optimizer state for {} missing or misshapen", s.name)))
                };
                ms.push(get(&mut m)?);
                vs.push(get(&mut v)?);
            }
            let step = header
                .metadata
                .get("optimizer.step")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("optimizer state without optimizer.step"))?;
            Some(OptimizerState { step, m: ms, v: vs })
        };
        let mut metadata = header.metadata;
        metadata.remove("optimizer.step");
        Ok(Checkpoint {
            model,
            vocab_hash: header.vocab_hash,
            step: header.step,
            optimizer,
            metadata,
        })
    }

    /// Load and insist the checkpoint was trained with `vocab_hash`.
    pub fn load(path: &Path, vocab_hash: &str) -> Result<Self, ModelError> {
        let ck = Self::load_unchecked(path)?;
        if ck.vocab_hash != vocab_hash {
            return Err(ModelError::VocabMismatch {
                expected: vocab_hash.to_string(),
                found: ck.vocab_hash,
            });
        }
        Ok(ck)
    }

    pub fn load_unchecked(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl CheckpointHeader {
    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)?;
        Ok(split_header(&bytes)?.0)
    }
}

fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), ModelError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(bad("header and prefix disagree on the format version"));
    }
    Ok((header, &bytes[20 + len..]))
}

//! Checkpoint files.
//!
//! Layout: `AFCK`, a little-endian `u32` format version, a `u64` header length, a JSON
//! header, then one tensor container per entry listed in the header, in header order.
//! The header carries the model config as TOML text, the class label names, the tensor
//! manifest (name, kind, shape, dtype) and free-form metadata.

use super::{Classifier, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{LayerParams, ParamKind};
use crate::tensor::serialize::{read_tensor, write_tensor};
use crate::tensor::{DType, Tensor};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"AFCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Class names, index = class id.
    pub labels: Vec<String>,
    pub params: LayerParams<f32>,
    /// Extra named tensors (optimizer moments and the like).
    pub state: BTreeMap<String, Tensor<f32>>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: String,
    labels: Vec<String>,
    tensors: Vec<Entry>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    /// `None` for optimizer state.
    kind: Option<ParamKind>,
    shape: Vec<usize>,
    dtype: String,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl Checkpoint {
    pub fn new(config: ModelConfig, labels: Vec<String>, params: LayerParams<f32>) -> Self {
        Checkpoint { config, labels, params, state: BTreeMap::new(), meta: serde_json::Value::Null }
    }

    pub fn model(&self) -> Result<Classifier> {
        Classifier::new(self.config.clone())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut tensors = Vec::new();
        let entry = |name: &str, kind, t: &Tensor<f32>| Entry {
            name: name.to_string(),
            kind,
            shape: t.shape().to_vec(),
            dtype: DType::F32.name().to_string(),
        };
        for (name, t, kind) in self.params.iter() {
            tensors.push(entry(name, Some(kind), t));
        }
        for (name, t) in &self.state {
            tensors.push(entry(name, None, t));
        }
        let header = Header {
            config: self.config.to_toml(),
            labels: self.labels.clone(),
            tensors,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t, _) in self.params.iter() {
            write_tensor(w, t)?;
        }
        for t in self.state.values() {
            write_tensor(w, t)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| format_err("checkpoint truncated before magic"))?;
        if &magic != MAGIC {
            return Err(format_err(format!("not a checkpoint (magic {magic:?})")));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| format_err("checkpoint truncated in version"))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| format_err("checkpoint truncated in header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| format_err("checkpoint truncated in header"))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| format_err(format!("checkpoint header: {e}")))?;
        let config = ModelConfig::from_toml(&header.config)?;
        if header.labels.len() != config.num_classes {
            return Err(format_err(format!(
                "checkpoint has {} labels but the model has {} classes",
                header.labels.len(),
                config.num_classes
            )));
        }

        let mut params = LayerParams::new();
        let mut state = BTreeMap::new();
        for e in &header.tensors {
            if e.dtype != DType::F32.name() {
                return Err(format_err(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let t: Tensor<f32> = read_tensor(r)?;
            if t.shape() != e.shape.as_slice() {
                return Err(format_err(format!(
                    "{}: manifest shape {:?} but payload shape {:?}",
                    e.name,
                    e.shape,
                    t.shape()
                )));
            }
            match e.kind {
                Some(kind) => params.insert(e.name.clone(), t, kind)?,
                None => {
                    state.insert(e.name.clone(), t);
                }
            }
        }
        let ckpt = Checkpoint { config, labels: header.labels, params, state, meta: header.meta };
        ckpt.validate_params()?;
        Ok(ckpt)
    }

    /// Checks that the parameter set is exactly what the config's model expects.
    pub fn validate_params(&self) -> Result<()> {
        let expected: LayerParams<f32> = self.model()?.init_params(0)?;
        for (name, t, kind) in expected.iter() {
            let got = self
                .params
                .get(name)
                .ok_or_else(|| format_err(format!("checkpoint is missing parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(format_err(format!(
                    "parameter {name}: config expects shape {:?}, checkpoint has {:?}",
                    t.shape(),
                    got.shape()
                )));
            }
            if self.params.kind(name) != Some(kind) {
                return Err(format_err(format!("parameter {name}: kind mismatch")));
            }
        }
        if let Some(extra) = self.params.names().into_iter().find(|n| expected.get(n).is_none()) {
            return Err(format_err(format!("checkpoint has unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::read_from(&mut BufReader::new(file))
    }
}

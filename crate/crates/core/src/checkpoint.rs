//! `RPTF` tensor container.
//!
//! Layout: 4-byte magic `RPTF`, `u32` LE version, `u64` LE header length,
//! a JSON header `{"meta": ..., "tensors": [{name, shape, offset}]}`, then
//! the payload of little-endian `f32` values, tensors in manifest order with
//! `offset` counted in bytes from the start of the payload.
//!
//! Values are computed in `f64` and stored as `f32`, so a save of freshly
//! computed weights rounds, while load → save is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelSpec};
use crate::numcore::{Matrix, Parameterized};

pub const MAGIC: &[u8; 4] = b"RPTF";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 16;
const F32_BYTES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

impl TensorEntry {
    fn byte_len(&self) -> u64 {
        (self.shape[0] * self.shape[1]) as u64 * F32_BYTES
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: Value,
    tensors: Vec<TensorEntry>,
}

/// Decoded container: free-form metadata plus named tensors in manifest
/// order.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: Value,
    pub tensors: Vec<(String, Matrix)>,
}

impl Container {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Matrix) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, m) in &self.tensors {
            let entry = TensorEntry {
                name: name.clone(),
                shape: [m.rows(), m.cols()],
                offset,
            };
            offset += entry.byte_len();
            manifest.push(entry);
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: manifest,
        })?;

        let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, m) in &self.tensors {
            for (i, &v) in m.as_slice().iter().enumerate() {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::NonFinite(format!("{name}[{i}] = {v} does not fit in f32")));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let available = bytes.len() as u64;
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic {
                found: bytes[..bytes.len().min(4)].to_vec(),
            }
            .into());
        }
        if bytes.len() < PREAMBLE {
            return Err(CheckpointError::TruncatedHeader {
                needed: PREAMBLE as u64,
                available,
            }
            .into());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                supported: VERSION,
            }
            .into());
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = (PREAMBLE as u64).saturating_add(header_len);
        if header_end > available {
            return Err(CheckpointError::TruncatedHeader {
                needed: header_end,
                available,
            }
            .into());
        }
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end as usize])
            .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
        let payload = &bytes[header_end as usize..];
        check_manifest(&header.tensors, payload.len() as u64)?;

        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let start = entry.offset as usize;
            let end = start + entry.byte_len() as usize;
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let m = Matrix::from_vec(entry.shape[0], entry.shape[1], data).map_err(|e| {
                CheckpointError::TensorMismatch {
                    name: entry.name.clone(),
                    detail: e.to_string(),
                }
            })?;
            tensors.push((entry.name.clone(), m));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Every entry must end inside the payload, entries must not share bytes,
/// and together they must cover the payload with no gaps.
fn check_manifest(entries: &[TensorEntry], payload_len: u64) -> Result<()> {
    let mut names = BTreeMap::new();
    for e in entries {
        if names.insert(e.name.as_str(), ()).is_some() {
            return Err(CheckpointError::MalformedHeader(format!("duplicate tensor name {}", e.name)).into());
        }
        if e.offset % F32_BYTES != 0 {
            return Err(CheckpointError::MalformedHeader(format!("{}: offset {} is not 4-aligned", e.name, e.offset)).into());
        }
        let end = e.offset.saturating_add(e.byte_len());
        if end > payload_len {
            return Err(CheckpointError::TruncatedPayload {
                name: e.name.clone(),
                end,
                available: payload_len,
            }
            .into());
        }
    }
    let mut sorted: Vec<&TensorEntry> = entries.iter().filter(|e| e.byte_len() > 0).collect();
    sorted.sort_by_key(|e| e.offset);
    let mut cursor = 0u64;
    let mut prev: Option<&TensorEntry> = None;
    for e in sorted {
        if e.offset < cursor {
            return Err(CheckpointError::Overlap {
                first: prev.map_or_else(String::new, |p| p.name.clone()),
                second: e.name.clone(),
            }
            .into());
        }
        if e.offset > cursor {
            return Err(CheckpointError::Coverage(format!("gap of {} bytes before {}", e.offset - cursor, e.name)).into());
        }
        cursor = e.offset + e.byte_len();
        prev = Some(e);
    }
    if cursor != payload_len {
        return Err(CheckpointError::Coverage(format!(
            "{} trailing payload bytes not claimed by any tensor",
            payload_len - cursor
        ))
        .into());
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    kind: String,
    #[serde(flatten)]
    spec: ModelSpec,
}

const MODEL_KIND: &str = "model";

/// Model configuration and plan in the header, parameters in visiting order.
pub fn model_to_container(model: &Model) -> Result<Container> {
    let meta = serde_json::to_value(ModelMeta {
        kind: MODEL_KIND.into(),
        spec: model.spec(),
    })?;
    let mut c = Container::new(meta);
    model.visit_params(&mut |name, m| c.push(name, m.clone()));
    Ok(c)
}

pub fn model_from_container(c: &Container) -> Result<Model> {
    let meta: ModelMeta =
        serde_json::from_value(c.meta.clone()).map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;
    if meta.kind != MODEL_KIND {
        return Err(CheckpointError::MalformedHeader(format!("expected a model container, found {:?}", meta.kind)).into());
    }
    let mut model = meta.spec.instantiate(0)?;
    let expected = model.layer_signature();
    if expected.len() != c.tensors.len() {
        return Err(CheckpointError::TensorMismatch {
            name: "*".into(),
            detail: format!("model has {} tensors, container has {}", expected.len(), c.tensors.len()),
        }
        .into());
    }
    for ((name, shape), (stored, m)) in expected.iter().zip(&c.tensors) {
        if name != stored || *shape != m.shape() {
            return Err(CheckpointError::TensorMismatch {
                name: stored.clone(),
                detail: format!("expected {name} {shape:?}, found {stored} {:?}", m.shape()),
            }
            .into());
        }
    }
    let mut values = c.tensors.iter().map(|(_, m)| m);
    model.visit_params_mut(&mut |_, p| {
        let src = values.next().expect("lengths checked");
        p.as_mut_slice().copy_from_slice(src.as_slice());
    });
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    model_to_container(model)?.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    model_from_container(&Container::load(path)?)
}

pub fn model_bytes(model: &Model) -> Result<Vec<u8>> {
    model_to_container(model)?.to_bytes()
}

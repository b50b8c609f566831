//! Versioned binary container for backbone and prompt checkpoints.
//!
//! Layout: the magic bytes `UPCK`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a UTF-8 JSON header, then every tensor's
//! entries as little-endian `f64` in header order. Values round-trip
//! bit-exactly.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::model::{BackboneConfig, BackboneModel, Weights};
use crate::numerics::Matrix;
use crate::prompt::{PromptLayout, PromptSet, PromptShape};

pub const MAGIC: &[u8; 4] = b"UPCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Header {
    Backbone {
        config: BackboneConfig,
        frozen: bool,
        step: u64,
        tensors: Vec<TensorEntry>,
    },
    Prompts {
        prompt_len: usize,
        layout: PromptLayout,
        shape: PromptShape,
        tensors: Vec<TensorEntry>,
    },
}

impl Header {
    fn tensors(&self) -> &[TensorEntry] {
        match self {
            Header::Backbone { tensors, .. } | Header::Prompts { tensors, .. } => tensors,
        }
    }
}

fn entries<'a>(visit: impl FnOnce(&mut dyn FnMut(String, &'a Matrix))) -> (Vec<TensorEntry>, Vec<&'a Matrix>) {
    let mut names = Vec::new();
    let mut mats = Vec::new();
    visit(&mut |name, m: &'a Matrix| {
        names.push(TensorEntry {
            name,
            rows: m.rows(),
            cols: m.cols(),
        });
        mats.push(m);
    });
    (names, mats)
}

fn encode(header: &Header, mats: &[&Matrix]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let payload: usize = mats.iter().map(|m| m.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for m in mats {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8], path: &Path) -> Result<(Header, Vec<Matrix>)> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if header_len > body.len() {
        return Err(bad("truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("malformed header: {e}")))?;
    let mut data = &body[header_len..];
    let expected: usize = header.tensors().iter().map(|t| t.rows * t.cols * 8).sum();
    if data.len() != expected {
        return Err(bad(format!("payload has {} bytes, header describes {expected}", data.len())));
    }
    let mut mats = Vec::with_capacity(header.tensors().len());
    for t in header.tensors() {
        let (chunk, rest) = data.split_at(t.rows * t.cols * 8);
        data = rest;
        let values = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        mats.push(Matrix::from_vec(t.rows, t.cols, values)?);
    }
    Ok((header, mats))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn backbone_bytes(model: &BackboneModel) -> Vec<u8> {
    let (tensors, mats) = entries(|f| model.weights().visit(&mut |n, m| f(n, m)));
    let header = Header::Backbone {
        config: *model.config(),
        frozen: model.is_frozen(),
        step: model.step(),
        tensors,
    };
    encode(&header, &mats)
}

pub fn backbone_from_bytes(bytes: &[u8], path: &Path) -> Result<BackboneModel> {
    let (header, mats) = decode(bytes, path)?;
    let Header::Backbone {
        config,
        frozen,
        step,
        tensors,
    } = header
    else {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "file holds prompts, not a backbone".into(),
        });
    };
    config.validate()?;
    let mut weights = Weights::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
    let mut names = Vec::new();
    weights.visit(&mut |n, _| names.push(n));
    if names.len() != tensors.len() || names.iter().zip(&tensors).any(|(n, t)| *n != t.name) {
        return Err(Error::Mismatch(format!(
            "{}: tensor list does not match the backbone layout",
            path.display()
        )));
    }
    let slots = weights.tensors_mut();
    for ((slot, m), t) in slots.into_iter().zip(mats).zip(&tensors) {
        if slot.shape() != m.shape() {
            return Err(Error::Mismatch(format!(
                "{}: tensor {} is {:?}, configuration needs {:?}",
                path.display(),
                t.name,
                m.shape(),
                slot.shape()
            )));
        }
        *slot = m;
    }
    BackboneModel::from_parts(config, weights, frozen, step)
}

pub fn save_backbone(path: &Path, model: &BackboneModel) -> Result<()> {
    write_atomic(path, &backbone_bytes(model))
}

pub fn load_backbone(path: &Path) -> Result<BackboneModel> {
    backbone_from_bytes(&read(path)?, path)
}

pub fn prompt_bytes(prompts: &PromptSet) -> Vec<u8> {
    let (tensors, mats) = entries(|f| prompts.visit(&mut |n, m| f(n, m)));
    let header = Header::Prompts {
        prompt_len: prompts.len(),
        layout: prompts.layout,
        shape: prompts.shape(),
        tensors,
    };
    encode(&header, &mats)
}

/// Decodes prompts; with `target`, also checks they fit that backbone.
pub fn prompts_from_bytes(bytes: &[u8], path: &Path, target: Option<&BackboneConfig>) -> Result<PromptSet> {
    let (header, mats) = decode(bytes, path)?;
    let Header::Prompts {
        prompt_len,
        layout,
        shape,
        ..
    } = header
    else {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "file holds a backbone, not prompts".into(),
        });
    };
    let set = PromptSet::from_tensors(shape, prompt_len, layout, mats)
        .map_err(|e| Error::Mismatch(format!("{}: {e}", path.display())))?;
    if let Some(cfg) = target {
        set.check_compatible(cfg)
            .map_err(|e| Error::Mismatch(format!("{} does not fit the backbone: {e}", path.display())))?;
    }
    Ok(set)
}

pub fn save_prompts(path: &Path, prompts: &PromptSet) -> Result<()> {
    write_atomic(path, &prompt_bytes(prompts))
}

pub fn load_prompts(path: &Path, target: Option<&BackboneConfig>) -> Result<PromptSet> {
    prompts_from_bytes(&read(path)?, path, target)
}

//! Named weight tensors and the single-file checkpoint format.
//!
//! Layout:
//!
//! ```text
//! 0..8      magic "FUSICL01"
//! 8..16     manifest length L, u64 little-endian
//! 16..16+L  UTF-8 JSON manifest {"config": .., "tensors": {name: {shape, byte_offset, byte_len}}}
//! 16+L..    tensor data, f32 little-endian; byte_offset is relative to this point
//! ```
//!
//! Tensors are written in lexicographic name order with no padding, so a
//! save/load/save cycle reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{FormatError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FUSICL01";

const ATTN_PROJ: [&str; 4] = ["q", "k", "v", "o"];

/// Every tensor name the config requires, with its shape.
pub fn expected_tensors(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let d = cfg.d_model;
    let inner = cfg.inner_dim();
    let mut m = BTreeMap::new();
    m.insert("embed_tokens".to_string(), vec![cfg.vocab_size, d]);
    m.insert("lm_head".to_string(), vec![d, cfg.vocab_size]);

    let attn = |m: &mut BTreeMap<String, Vec<usize>>, prefix: String| {
        for p in ATTN_PROJ {
            let shape = if p == "o" {
                vec![inner, d]
            } else {
                vec![d, inner]
            };
            m.insert(format!("{prefix}.{p}"), shape);
        }
    };
    for (stack, layers, cross) in [
        ("encoder", cfg.n_enc_layers, false),
        ("decoder", cfg.n_dec_layers, true),
    ] {
        m.insert(
            format!("{stack}.rel_bias"),
            vec![cfg.rel_buckets, cfg.n_heads],
        );
        m.insert(format!("{stack}.final_norm"), vec![d]);
        for i in 0..layers {
            let l = format!("{stack}.layer.{i}");
            m.insert(format!("{l}.self_attn_norm"), vec![d]);
            attn(&mut m, format!("{l}.self_attn"));
            if cross {
                m.insert(format!("{l}.cross_attn_norm"), vec![d]);
                attn(&mut m, format!("{l}.cross_attn"));
            }
            m.insert(format!("{l}.ffn_norm"), vec![d]);
            m.insert(format!("{l}.ffn.wi"), vec![d, cfg.d_ff]);
            m.insert(format!("{l}.ffn.wo"), vec![cfg.d_ff, d]);
        }
    }
    m
}

pub fn is_norm_weight(name: &str) -> bool {
    name.ends_with("_norm")
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// An immutable, validated set of model weights.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
    /// Distinguishes weight sets for caches derived from them; clones share it.
    id: u64,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors
    }
}

impl Checkpoint {
    pub fn new(config: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = expected_tensors(&config);
        for (name, shape) in &expected {
            match tensors.get(name) {
                None => {
                    return Err(FormatError::TensorMismatch {
                        name: name.clone(),
                        message: "missing".into(),
                    }
                    .into())
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(FormatError::TensorMismatch {
                        name: name.clone(),
                        message: format!("expected shape {shape:?}, found {:?}", t.shape()),
                    }
                    .into())
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(FormatError::TensorMismatch {
                name: extra.clone(),
                message: "not used by this config".into(),
            }
            .into());
        }
        Ok(Self {
            config,
            tensors,
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub(crate) fn id(&self) -> u64 {
        self.id
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    /// Looks up a tensor that `new` has already guaranteed to exist.
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("checkpoint has no tensor `{name}`"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut table = BTreeMap::new();
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let byte_len = (t.len() * 4) as u64;
            table.insert(
                name.clone(),
                TensorEntry {
                    shape: t.shape().to_vec(),
                    byte_offset: offset,
                    byte_len,
                },
            );
            offset += byte_len;
        }
        let manifest = serde_json::to_vec(&Manifest {
            config: self.config.clone(),
            tensors: table,
        })?;

        let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(FormatError::Truncated(format!(
                "{} bytes is shorter than the magic",
                bytes.len()
            ))
            .into());
        }
        if &bytes[..8] != MAGIC {
            return Err(FormatError::BadMagic {
                found: bytes[..8].to_vec(),
            }
            .into());
        }
        if bytes.len() < 16 {
            return Err(FormatError::Truncated("missing manifest length".into()).into());
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let data_start = 16u64
            .checked_add(manifest_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| {
                FormatError::Truncated(format!(
                    "manifest declares {manifest_len} bytes but only {} remain",
                    bytes.len() - 16
                ))
            })? as usize;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| FormatError::Manifest(e.to_string()))?;
        manifest
            .config
            .validate()
            .map_err(|e| FormatError::Manifest(e.to_string()))?;

        let data = &bytes[data_start..];
        let mut tensors = BTreeMap::new();
        let mut covered = 0u64;
        for (name, entry) in manifest.tensors {
            let numel: u64 = entry.shape.iter().map(|&d| d as u64).product();
            if numel * 4 != entry.byte_len {
                return Err(FormatError::TensorMismatch {
                    name,
                    message: format!(
                        "shape {:?} needs {} bytes but byte_len is {}",
                        entry.shape,
                        numel * 4,
                        entry.byte_len
                    ),
                }
                .into());
            }
            let end = entry
                .byte_offset
                .checked_add(entry.byte_len)
                .filter(|&end| end <= data.len() as u64)
                .ok_or_else(|| {
                    FormatError::Truncated(format!(
                        "tensor `{name}` ends past the {} data bytes present",
                        data.len()
                    ))
                })?;
            covered += entry.byte_len;
            let values = data[entry.byte_offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(entry.shape, values).map_err(|e| FormatError::TensorMismatch {
                name: name.clone(),
                message: e.to_string(),
            })?;
            tensors.insert(name, t);
        }
        if covered != data.len() as u64 {
            return Err(FormatError::Manifest(format!(
                "tensor table covers {covered} bytes but the data section holds {}",
                data.len()
            ))
            .into());
        }
        Checkpoint::new(manifest.config, tensors)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    byte_offset: u64,
    byte_len: u64,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes)
}

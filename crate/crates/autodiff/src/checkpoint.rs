//! Parameter checkpoints.
//!
//! Layout: an 8-byte little-endian `u64` giving the header length, the UTF-8
//! JSON header, then every tensor's data as little-endian `f64` in header
//! order. The header carries a free-form `config` object, the optimizer step
//! count and the name and shape of each tensor.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "cdp-checkpoint-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: serde_json::Value,
    step: u64,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: FORMAT.to_string(),
            config: self.config.clone(),
            step: self.step,
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.tensor.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| AutodiffError::Format(e.to_string()))?;
        let body: usize = self.tensors.iter().map(|t| t.tensor.numel() * 8).sum();
        let mut out = Vec::with_capacity(8 + json.len() + body);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| AutodiffError::Format("truncated header length at offset 0".into()))?;
        let hlen = u64::from_le_bytes(len_bytes) as usize;
        let json = bytes.get(8..8 + hlen).ok_or_else(|| {
            AutodiffError::Format(format!("header of {hlen} bytes exceeds file at offset 8"))
        })?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| AutodiffError::Format(format!("header json at offset 8: {e}")))?;
        if header.format != FORMAT {
            return Err(AutodiffError::Format(format!(
                "unknown format tag {:?}",
                header.format
            )));
        }
        let mut offset = 8 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let numel: usize = entry.shape.iter().product();
            let end = offset + numel * 8;
            let raw = bytes.get(offset..end).ok_or_else(|| {
                AutodiffError::Format(format!(
                    "tensor {} truncated at offset {offset}",
                    entry.name
                ))
            })?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            tensors.push(NamedTensor {
                name: entry.name,
                tensor: Tensor::new(entry.shape, data)?,
            });
            offset = end;
        }
        if offset != bytes.len() {
            return Err(AutodiffError::Format(format!(
                "{} trailing bytes after offset {offset}",
                bytes.len() - offset
            )));
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

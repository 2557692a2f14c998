// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat tensor container.
//!
//! Layout: an 8-byte little-endian header length `n`, then `n` bytes of JSON
//! mapping tensor names to `{dtype, shape, data_offsets}`, then the raw
//! little-endian element data. Offsets are relative to the start of the data
//! section. Only `F32` elements are supported.
//!
//! The layout is safetensors-compatible for f32 tensors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A raw named tensor as stored on disk: shape plus flat f32 data.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (usize, usize),
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::MalformedContainer {
        detail: detail.into(),
    }
}

/// Parse a container from bytes.
pub fn read_container(bytes: &[u8]) -> Result<BTreeMap<String, RawTensor>> {
    if bytes.len() < 8 {
        return Err(malformed("shorter than the 8-byte header length"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let data_start = 8usize
        .checked_add(header_len)
        .ok_or_else(|| malformed("header length overflows"))?;
    if data_start > bytes.len() {
        return Err(malformed(format!(
            "header length {header_len} exceeds container size {}",
            bytes.len()
        )));
    }
    let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&bytes[8..data_start])
        .map_err(|e| malformed(format!("header is not valid JSON: {e}")))?;

    let data = &bytes[data_start..];
    let mut out = BTreeMap::new();
    for (name, entry) in header {
        if name == "__metadata__" {
            continue;
        }
        if entry.dtype != "F32" {
            return Err(malformed(format!(
                "tensor `{name}` has unsupported dtype `{}`",
                entry.dtype
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let (start, end) = entry.data_offsets;
        if end < start || end > data.len() || end - start != numel * 4 {
            return Err(malformed(format!(
                "tensor `{name}` has inconsistent data offsets {start}..{end}"
            )));
        }
        let mut values = Vec::with_capacity(numel);
        for chunk in data[start..end].chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        out.insert(
            name,
            RawTensor {
                shape: entry.shape,
                data: values,
            },
        );
    }
    Ok(out)
}

/// Serialize tensors into container bytes. Tensors are laid out in name order,
/// so the output is deterministic.
pub fn write_container(tensors: &BTreeMap<String, RawTensor>) -> Vec<u8> {
    let mut header = BTreeMap::new();
    let mut offset = 0usize;
    for (name, t) in tensors {
        let len = t.data.len() * 4;
        header.insert(
            name.clone(),
            HeaderEntry {
                dtype: "F32".to_string(),
                shape: t.shape.clone(),
                data_offsets: (offset, offset + len),
            },
        );
        offset += len;
    }
    let header_bytes = serde_json::to_vec(&header).expect("header serialization");
    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in tensors.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_container_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, RawTensor>> {
    let bytes = std::fs::read(path)?;
    read_container(&bytes)
}

pub fn write_container_file(
    path: impl AsRef<Path>,
    tensors: &BTreeMap<String, RawTensor>,
) -> Result<()> {
    std::fs::write(path, write_container(tensors))?;
    Ok(())
}

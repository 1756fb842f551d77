//! Reader and writer for the REB1 story container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4        magic "REB1"
//! bytes 4..12       u64 manifest length M
//! bytes 12..12+M    UTF-8 JSON manifest
//! bytes 12+M..      float32 tensor payloads, row-major
//! ```
//!
//! Tensor offsets are relative to the payload start, 64-byte aligned, and
//! the gaps between tensors are zero-filled. The reader only accepts the
//! canonical packing the writer produces, so a successful read followed by
//! a write reproduces the file byte for byte.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::story::{SpanLayout, StoryEmbeddingBundle, TokenEmbeddingMatrix};

pub const MAGIC: &[u8; 4] = b"REB1";
pub const FORMAT_VERSION: u32 = 1;
pub const PAYLOAD_ALIGNMENT: u64 = 64;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "float32")]
    Float32,
}

impl DType {
    pub fn size(self) -> u64 {
        match self {
            DType::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<u64>,
    pub dtype: DType,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub tensor: String,
    pub layout: SpanLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryManifest {
    pub format_version: u32,
    pub frame_count: usize,
    pub embedding_dim: usize,
    pub frames: Vec<FrameEntry>,
    pub tensors: Vec<TensorHeader>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, Value>,
}

fn format_err(msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("invalid REB1 container: {msg}"))
}

fn align_up(offset: u64) -> u64 {
    offset.div_ceil(PAYLOAD_ALIGNMENT) * PAYLOAD_ALIGNMENT
}

/// Builds the manifest the writer would emit for `bundle`.
pub fn manifest_for(bundle: &StoryEmbeddingBundle) -> StoryManifest {
    let mut offset = 0u64;
    let mut tensors = Vec::with_capacity(bundle.frame_count());
    let mut frames = Vec::with_capacity(bundle.frame_count());
    for frame in bundle.frames() {
        let shape = vec![frame.rows() as u64, frame.dim() as u64];
        let byte_length = DType::Float32.size() * frame.values.len() as u64;
        offset = align_up(offset);
        tensors.push(TensorHeader {
            name: frame.name.clone(),
            shape,
            dtype: DType::Float32,
            byte_offset: offset,
            byte_length,
        });
        frames.push(FrameEntry {
            tensor: frame.name.clone(),
            layout: frame.layout,
        });
        offset += byte_length;
    }
    StoryManifest {
        format_version: FORMAT_VERSION,
        frame_count: bundle.frame_count(),
        embedding_dim: bundle.embedding_dim(),
        frames,
        tensors,
        provenance: bundle.provenance().clone(),
    }
}

/// Serializes a bundle to container bytes. Deterministic.
pub fn encode_story(bundle: &StoryEmbeddingBundle) -> Result<Vec<u8>> {
    let manifest = manifest_for(bundle);
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Format(format!("cannot serialize manifest: {e}")))?;
    let payload_len = manifest
        .tensors
        .last()
        .map(|t| t.byte_offset + t.byte_length)
        .unwrap_or(0);

    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload_len as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let payload_start = out.len();
    for (frame, header) in bundle.frames().iter().zip(&manifest.tensors) {
        out.resize(payload_start + header.byte_offset as usize, 0);
        for row in frame.values.row_iter() {
            for v in row.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    debug_assert_eq!(out.len(), payload_start + payload_len as usize);
    Ok(out)
}

pub fn write_story(bundle: &StoryEmbeddingBundle, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_story(bundle)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_story(path: impl AsRef<Path>) -> Result<StoryEmbeddingBundle> {
    let bytes = fs::read(path)?;
    decode_story(&bytes)
}

/// Parses the header and manifest without touching tensor payloads.
pub fn decode_manifest(bytes: &[u8]) -> Result<(StoryManifest, usize)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err("missing REB1 magic bytes"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(format!(
            "truncated header: {} bytes, need {HEADER_LEN}",
            bytes.len()
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let manifest_end = (HEADER_LEN as u64)
        .checked_add(manifest_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| {
            format_err(format!(
                "truncated manifest: declares {manifest_len} bytes, file has {}",
                bytes.len() - HEADER_LEN
            ))
        })? as usize;
    let json = std::str::from_utf8(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| format_err(format!("manifest is not UTF-8: {e}")))?;
    let manifest: StoryManifest =
        serde_json::from_str(json).map_err(|e| format_err(format!("malformed manifest: {e}")))?;
    Ok((manifest, manifest_end))
}

/// Parses container bytes into a validated bundle.
pub fn decode_story(bytes: &[u8]) -> Result<StoryEmbeddingBundle> {
    let (manifest, payload_start) = decode_manifest(bytes)?;
    let payload = &bytes[payload_start..];
    validate_manifest(&manifest, payload)?;

    let by_name: HashMap<&str, &TensorHeader> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut frames = Vec::with_capacity(manifest.frame_count);
    for (n, entry) in manifest.frames.iter().enumerate() {
        let header = by_name[entry.tensor.as_str()];
        let (rows, cols) = (header.shape[0] as usize, header.shape[1] as usize);
        let start = header.byte_offset as usize;
        let raw = &payload[start..start + header.byte_length as usize];
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let values = DMatrix::from_row_slice(rows, cols, &data);
        let frame =
            TokenEmbeddingMatrix::new(entry.tensor.clone(), values, entry.layout, n).map_err(|e| e.in_frame(n))?;
        frames.push(frame);
    }
    StoryEmbeddingBundle::with_provenance(frames, manifest.provenance)
}

fn validate_manifest(manifest: &StoryManifest, payload: &[u8]) -> Result<()> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported format_version {}, expected {FORMAT_VERSION}",
            manifest.format_version
        )));
    }
    if manifest.frame_count == 0 {
        return Err(format_err("frame_count must be positive"));
    }
    if manifest.frame_count != manifest.frames.len() {
        return Err(format_err(format!(
            "frame_count {} does not match {} frame entries",
            manifest.frame_count,
            manifest.frames.len()
        )));
    }
    if manifest.embedding_dim == 0 {
        return Err(format_err("embedding_dim must be positive"));
    }

    let d = manifest.embedding_dim as u64;
    let mut expected_offset = 0u64;
    let mut referenced: HashMap<&str, usize> = HashMap::new();
    for header in &manifest.tensors {
        if referenced.insert(header.name.as_str(), 0).is_some() {
            return Err(format_err(format!("tensor {:?} declared twice", header.name)));
        }
        let [rows, cols] = header.shape[..] else {
            return Err(format_err(format!(
                "tensor {:?} has rank {}, only matrices are supported",
                header.name,
                header.shape.len()
            )));
        };
        if cols != d {
            return Err(format_err(format!(
                "tensor {:?} has shape [{rows}, {cols}] but embedding_dim is {d}",
                header.name
            )));
        }
        let expected_len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(header.dtype.size()))
            .ok_or_else(|| format_err(format!("tensor {:?} shape overflows", header.name)))?;
        if header.byte_length != expected_len {
            return Err(format_err(format!(
                "tensor {:?} byte_length {} does not match shape [{rows}, {cols}] ({expected_len} bytes)",
                header.name, header.byte_length
            )));
        }
        expected_offset = align_up(expected_offset);
        if header.byte_offset != expected_offset {
            return Err(format_err(format!(
                "tensor {:?} byte_offset {} is not packed: expected {expected_offset}",
                header.name, header.byte_offset
            )));
        }
        expected_offset += header.byte_length;
    }
    if payload.len() as u64 != expected_offset {
        return Err(format_err(format!(
            "payload has {} bytes, tensor headers account for {expected_offset}",
            payload.len()
        )));
    }
    check_zero_padding(&manifest.tensors, payload)?;

    for (n, entry) in manifest.frames.iter().enumerate() {
        match referenced.get_mut(entry.tensor.as_str()) {
            None => {
                return Err(format_err(format!(
                    "frame {n} references unknown tensor {:?}",
                    entry.tensor
                )))
            }
            Some(count) => {
                *count += 1;
                if *count > 1 {
                    return Err(format_err(format!(
                        "tensor {:?} is referenced by more than one frame",
                        entry.tensor
                    )));
                }
            }
        }
    }
    if let Some((name, _)) = referenced.iter().find(|(_, &c)| c == 0) {
        return Err(format_err(format!("tensor {name:?} is not referenced by any frame")));
    }
    Ok(())
}

fn check_zero_padding(tensors: &[TensorHeader], payload: &[u8]) -> Result<()> {
    let mut cursor = 0usize;
    for header in tensors {
        let start = header.byte_offset as usize;
        if payload[cursor..start].iter().any(|&b| b != 0) {
            return Err(format_err(format!("non-zero padding before tensor {:?}", header.name)));
        }
        cursor = start + header.byte_length as usize;
    }
    Ok(())
}

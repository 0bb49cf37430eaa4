//! Checkpoint container.
//!
//! Layout: the 8 bytes `DPPCKPT\0`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every array as
//! little-endian `f64` values in row-major order. The header lists each array
//! with its shape, offset (in values) and SHA-256 of its bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PolicyConfig, PolicyParameters};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DPPCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub parameters: PolicyParameters,
    /// Additional named vectors, e.g. optimiser moments.
    pub extra: Vec<(String, Vec<f64>)>,
    pub metadata: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: PolicyConfig,
    arrays: Vec<ArrayEntry>,
    metadata: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
    sha256: String,
}

fn bytes_of(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_parameters(path: impl AsRef<Path>, params: &PolicyParameters) -> Result<()> {
    save_checkpoint(
        path,
        &Checkpoint {
            parameters: params.clone(),
            extra: Vec::new(),
            metadata: serde_json::Value::Null,
        },
    )
}

/// Loads parameters; with `expected` set, refuses a checkpoint whose
/// configuration differs.
pub fn load_parameters(
    path: impl AsRef<Path>,
    expected: Option<&PolicyConfig>,
) -> Result<PolicyParameters> {
    let ckpt = load_checkpoint(path)?;
    if let Some(cfg) = expected {
        if cfg != ckpt.parameters.config() {
            return Err(Error::Checkpoint(format!(
                "checkpoint configuration {:?} does not match expected {:?}",
                ckpt.parameters.config(),
                cfg
            )));
        }
    }
    Ok(ckpt.parameters)
}

/// Writes via a temporary file and rename so readers never see partial files.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let params = &ckpt.parameters;
    let mut arrays = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>, values: &[f64]| {
        let bytes = bytes_of(values);
        arrays.push(ArrayEntry {
            name,
            shape,
            offset,
            len: values.len(),
            sha256: checksum(&bytes),
        });
        offset += values.len();
        payload.extend_from_slice(&bytes);
    };
    for spec in params.layout().specs() {
        push(spec.name.clone(), vec![spec.rows, spec.cols], &params.values[spec.range()]);
    }
    for (name, values) in &ckpt.extra {
        push(format!("extra.{name}"), vec![values.len()], values);
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: *params.config(),
        arrays,
        metadata: ckpt.metadata.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(20 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);

    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    parse_checkpoint(&bytes)
}

fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad("header format version disagrees with file prefix"));
    }
    let payload = &bytes[header_end..];
    let read_array = |entry: &ArrayEntry| -> Result<Vec<f64>> {
        let start = entry.offset * 8;
        let end = start + entry.len * 8;
        if end > payload.len() || entry.shape.iter().product::<usize>() != entry.len {
            return Err(Error::Checkpoint(format!("array {} is truncated or misshapen", entry.name)));
        }
        let raw = &payload[start..end];
        if checksum(raw) != entry.sha256 {
            return Err(Error::Checkpoint(format!("checksum mismatch in array {}", entry.name)));
        }
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    header.config.validate()?;
    let layout = super::ParamLayout::new(&header.config);
    let specs = layout.specs();
    if header.arrays.len() < specs.len() {
        return Err(bad("checkpoint is missing parameter arrays"));
    }
    let mut values = Vec::with_capacity(layout.total());
    for (spec, entry) in specs.iter().zip(&header.arrays) {
        if entry.name != spec.name || entry.shape != [spec.rows, spec.cols] {
            return Err(Error::Checkpoint(format!(
                "array {} with shape {:?} where {} with shape [{}, {}] was expected",
                entry.name, entry.shape, spec.name, spec.rows, spec.cols
            )));
        }
        values.extend(read_array(entry)?);
    }
    let mut extra = Vec::new();
    for entry in &header.arrays[specs.len()..] {
        let name = entry
            .name
            .strip_prefix("extra.")
            .ok_or_else(|| Error::Checkpoint(format!("unexpected array {}", entry.name)))?;
        extra.push((name.to_string(), read_array(entry)?));
    }
    Ok(Checkpoint {
        parameters: PolicyParameters::from_values(header.config, values)?,
        extra,
        metadata: header.metadata,
    })
}

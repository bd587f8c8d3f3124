//! Artifact formats.
//!
//! A field is stored as two files: `<name>.bin` holds the node values as
//! little-endian `f64`, row-major with `y` rows of `nx` values each
//! (`(ny + 1) * nx` numbers), and `<name>.json` holds a [`FieldHeader`]
//! including the SHA-256 of the payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::regimes::ProblemParams;

pub const SCHEMA_VERSION: u32 = 1;

/// Extra header fields for rescaled fields around the contact point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupHeader {
    pub rho: f64,
    pub radius: f64,
    pub x0: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub schema_version: u32,
    pub nx: usize,
    pub ny: usize,
    pub y_max: f64,
    pub params: ProblemParams,
    pub eps_final: f64,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blowup: Option<BlowupHeader>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_values(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_values(bytes: &[u8]) -> Option<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_field(path: &Path, field: &Field, eps_final: f64) -> Result<FieldHeader> {
    write_field_with(path, field, eps_final, None)
}

pub fn write_field_with(
    path: &Path,
    field: &Field,
    eps_final: f64,
    blowup: Option<BlowupHeader>,
) -> Result<FieldHeader> {
    let bytes = encode_values(&field.values);
    let header = FieldHeader {
        schema_version: SCHEMA_VERSION,
        nx: field.grid.nx,
        ny: field.grid.ny,
        y_max: field.grid.y_max,
        params: field.grid.params,
        eps_final,
        sha256: sha256_hex(&bytes),
        blowup,
    };
    write_bytes(path, &bytes)?;
    write_json(&sidecar_path(path), &header)?;
    Ok(header)
}

/// Reads a payload and its header, verifying version, checksum and length.
pub fn read_payload(path: &Path) -> Result<(Vec<f64>, FieldHeader)> {
    let header: FieldHeader = read_json(&sidecar_path(path))?;
    let bad = |message: String| Error::Artifact {
        path: path.to_path_buf(),
        message,
    };
    if header.schema_version != SCHEMA_VERSION {
        return Err(bad(format!("unsupported schema_version {}", header.schema_version)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if sha256_hex(&bytes) != header.sha256 {
        return Err(bad("payload checksum mismatch".into()));
    }
    let values = decode_values(&bytes).ok_or_else(|| bad("payload length is not a multiple of 8".into()))?;
    if values.len() != header.nx * (header.ny + 1) {
        return Err(bad(format!("expected {} values, found {}", header.nx * (header.ny + 1), values.len())));
    }
    Ok((values, header))
}

/// Reads a field written by [`write_field`].
pub fn read_field(path: &Path) -> Result<(Field, FieldHeader)> {
    let (values, header) = read_payload(path)?;
    let bad = |message: String| Error::Artifact {
        path: path.to_path_buf(),
        message,
    };
    let grid = Grid::build(header.params, header.nx, header.ny, header.y_max)?;
    let field = Field::from_values(&grid, values).map_err(|e| bad(e.to_string()))?;
    Ok((field, header))
}

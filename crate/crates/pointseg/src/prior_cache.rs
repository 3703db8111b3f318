//! Flat binary cache for prior maps.
//!
//! Layout: magic `DSPR`, then little-endian `u32` version, width and height,
//! followed by `width * height` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use pointseg_core::image::Dims;
use pointseg_core::prior::ScalarField;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DSPR";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(field: &ScalarField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * field.values.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(field.dims.width as u32).to_le_bytes());
    out.extend_from_slice(&(field.dims.height as u32).to_le_bytes());
    for &v in &field.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<ScalarField, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if bytes[..4] != MAGIC {
        return Err("wrong magic".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(format!("unsupported version {}", word(4)));
    }
    let dims = Dims::new(word(8) as usize, word(12) as usize);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * dims.len() {
        return Err(format!(
            "{} payload bytes for a {}x{} map",
            body.len(),
            dims.width,
            dims.height
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(ScalarField { dims, values })
}

pub fn write_prior(path: &Path, field: &ScalarField) -> Result<()> {
    fs::write(path, encode(field)).map_err(|e| Error::io(path, e))
}

pub fn read_prior(path: &Path) -> Result<ScalarField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::PriorCache {
        path: path.to_path_buf(),
        message,
    })
}

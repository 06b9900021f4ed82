//! 8-bit binary PGM export of per-cell maps with a TOML sidecar holding the
//! normalisation bounds.
//!
//! Images are written north-up: the first image row is the grid's last row.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_toml, write_file, write_toml};

/// Gray level used for every pixel of a constant map.
pub const FLAT_LEVEL: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    /// Value mapped to gray level 0.
    pub min: f64,
    /// Value mapped to gray level 255.
    pub max: f64,
}

impl Sidecar {
    /// Value represented by gray level `g`; exact to within half a level.
    pub fn decode(&self, g: u8) -> f64 {
        if self.max == self.min {
            self.min
        } else {
            self.min + (self.max - self.min) * g as f64 / 255.0
        }
    }
}

/// Min-max normalised gray levels, in grid order.
pub fn encode(values: &[f64]) -> Result<(Vec<u8>, f64, f64)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("cannot export a map with non-finite values".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let levels = values
        .iter()
        .map(|&v| {
            if max == min {
                FLAT_LEVEL
            } else {
                ((v - min) / (max - min) * 255.0).round() as u8
            }
        })
        .collect();
    Ok((levels, min, max))
}

/// PGM bytes for a `rows × cols` grid-ordered map.
pub fn pgm_bytes(levels: &[u8], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = format!("P5 {cols} {rows} 255\n").into_bytes();
    for r in (0..rows).rev() {
        out.extend_from_slice(&levels[r * cols..(r + 1) * cols]);
    }
    out
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut p = image.as_os_str().to_owned();
    p.push(".toml");
    PathBuf::from(p)
}

/// Writes `path` (PGM) and `path.toml` (bounds).
pub fn export_pgm(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<Sidecar> {
    if values.len() != rows * cols || values.is_empty() {
        return Err(Error::Shape(format!("{} values for a {rows}x{cols} image", values.len())));
    }
    let (levels, min, max) = encode(values)?;
    write_file(path, pgm_bytes(&levels, rows, cols))?;
    let sidecar = Sidecar {
        width: cols,
        height: rows,
        min,
        max,
    };
    write_toml(&sidecar_path(path), &sidecar)?;
    Ok(sidecar)
}

/// Reads a PGM written by [`export_pgm`] back into grid-ordered values.
pub fn import_pgm(path: &Path) -> Result<Vec<f64>> {
    let sidecar: Sidecar = read_toml(&sidecar_path(path))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = format!("P5 {} {} 255\n", sidecar.width, sidecar.height);
    let body = bytes
        .strip_prefix(header.as_bytes())
        .ok_or_else(|| Error::format(path, "PGM header does not match the sidecar"))?;
    if body.len() != sidecar.width * sidecar.height {
        return Err(Error::format(path, "PGM body has the wrong size"));
    }
    let (w, h) = (sidecar.width, sidecar.height);
    let mut out = vec![0.0; w * h];
    for (k, chunk) in body.chunks_exact(w).enumerate() {
        let r = h - 1 - k;
        for (c, &g) in chunk.iter().enumerate() {
            out[r * w + c] = sidecar.decode(g);
        }
    }
    Ok(out)
}

//! Map bundles: an 8-bit class raster (PGM P5 or PNG) with a JSON sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{class_index, SemanticMap, CANONICAL_CLASSES, UNLABELLED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSidecar {
    pub scale_px_per_m: Option<f64>,
    /// Pixel value (as a decimal string) → class name.
    pub class_palette: BTreeMap<String, String>,
    #[serde(default)]
    pub origin_px: [f64; 2],
}

impl MapSidecar {
    pub fn canonical(scale: Option<f64>, origin_px: [f64; 2]) -> Self {
        MapSidecar {
            scale_px_per_m: scale,
            class_palette: CANONICAL_CLASSES
                .iter()
                .enumerate()
                .map(|(i, n)| (i.to_string(), n.to_string()))
                .collect(),
            origin_px,
        }
    }
}

/// `map.pgm` → `map.json`.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("json")
}

/// Reads a single-channel 8-bit raster; returns `(width, height, pixels)`.
pub fn read_raster(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") {
        return parse_pgm(&bytes).map_err(|m| Error::format(path.display().to_string(), m));
    }
    let img = image::load_from_memory(&bytes)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok((w as usize, h as usize, gray.into_raw()))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("bad PGM header")?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    pos += 1; // single whitespace after maxval
    let data = bytes.get(pos..pos + w * h).ok_or("truncated PGM data")?;
    Ok((w, h, data.to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(f, "P5\n{width} {height}\n255\n")
        .and_then(|_| f.write_all(pixels))
        .map_err(|e| Error::io(path, e))
}

/// Loads a raster and its sidecar into a [`SemanticMap`].
pub fn load_map_bundle(raster: &Path) -> Result<SemanticMap> {
    let side_path = sidecar_path(raster);
    if !side_path.exists() {
        return Err(Error::Config(format!(
            "map sidecar {} not found",
            side_path.display()
        )));
    }
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: MapSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", side_path.display())))?;
    let mut lut = [UNLABELLED; 256];
    for (value, name) in &sidecar.class_palette {
        let v: u8 = value.parse().map_err(|_| {
            Error::Config(format!("{}: palette key {value:?} is not a u8", side_path.display()))
        })?;
        lut[v as usize] = class_index(name).ok_or_else(|| {
            Error::Config(format!("{}: unknown class {name:?}", side_path.display()))
        })?;
    }
    if let Some(s) = sidecar.scale_px_per_m {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Config(format!(
                "{}: scale_px_per_m must be positive",
                side_path.display()
            )));
        }
    }
    let (w, h, pixels) = read_raster(raster)?;
    let cells = pixels.into_iter().map(|p| lut[p as usize]).collect();
    let mut map = SemanticMap::new(w, h, cells)?;
    map.scale_prior = sidecar.scale_px_per_m;
    map.origin_px = sidecar.origin_px;
    Ok(map)
}

/// Writes `map` as a PGM raster of canonical indices plus its sidecar.
pub fn save_map_bundle(map: &SemanticMap, raster: &Path) -> Result<()> {
    write_pgm(raster, map.width(), map.height(), map.cells())?;
    let sidecar = MapSidecar::canonical(map.scale_prior, map.origin_px);
    let side_path = sidecar_path(raster);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side_path, text + "\n").map_err(|e| Error::io(&side_path, e))
}

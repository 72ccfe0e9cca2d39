//! Minimal binary PGM (P5) support for image-level demos.
//!
//! Single-channel maps only; intensities clamp to [0, 1] and quantize to 8
//! bits on write, masked pixels render black. Reading yields a fully valid
//! map scaled back to [0, 1].

use std::path::Path;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

/// Writes a single-channel map as an 8-bit binary PGM.
pub fn write_pgm(path: &Path, map: &FeatureMap) -> Result<()> {
    if map.channels() != 1 {
        return Err(Error::dim(format!(
            "PGM is single-channel, map has {}",
            map.channels()
        )));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    for p in 0..map.pixel_count() {
        let v = if map.mask()[p] { map.data()[p] } else { 0.0 };
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM into a fully valid single-channel map.
pub fn read_pgm(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            while cursor < bytes.len() && bytes[cursor].is_ascii_whitespace() {
                cursor += 1;
            }
            if cursor < bytes.len() && bytes[cursor] == b'#' {
                while cursor < bytes.len() && bytes[cursor] != b'\n' {
                    cursor += 1;
                }
                continue;
            }
            break;
        }
        let start = cursor;
        while cursor < bytes.len() && !bytes[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(Error::format(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..cursor]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let parse = |s: String| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::format(path, format!("bad PGM header token {s:?}")))
    };
    let width = parse(token(&bytes)?)?;
    let height = parse(token(&bytes)?)?;
    let maxval = parse(token(&bytes)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    cursor += 1; // single whitespace after maxval
    let expected = width * height;
    let pixels = &bytes[cursor.min(bytes.len())..];
    if pixels.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} pixel bytes, found {}", pixels.len()),
        ));
    }
    let data: Vec<f32> = pixels.iter().map(|&b| b as f32 / maxval as f32).collect();
    FeatureMap::from_data(height, width, 1, data)
}

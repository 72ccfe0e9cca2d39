//! The binary tensor file format.
//!
//! Layout: magic `CVLT`, version (u32 LE, currently 1), ndim (u32 LE),
//! ndim dimensions (u32 LE each), then the payload as IEEE-754 binary32
//! little-endian, row-major with the last dimension varying fastest.
//! Write-then-read is bit-identical; all values must be finite.
//!
//! A feature map's visibility mask travels as a sibling file named by
//! appending `.mask` to the tensor's file name, holding an H x W tensor of
//! exact 0.0/1.0 values. The sibling is written only when some pixel is
//! invalid; a missing sibling means fully valid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

pub const TENSOR_MAGIC: [u8; 4] = *b"CVLT";
pub const TENSOR_VERSION: u32 = 1;

/// Sibling file carrying a tensor's visibility mask.
pub fn mask_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".mask");
    PathBuf::from(name)
}

/// Writes a raw tensor.
pub fn write_tensor(path: &Path, dims: &[usize], values: &[f32]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::invalid("a tensor needs at least one dimension"));
    }
    let count: usize = dims.iter().product();
    if count != values.len() {
        return Err(Error::dim(format!(
            "dims {dims:?} imply {count} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("tensors must hold finite values"));
    }
    for &d in dims {
        if d == 0 || d > u32::MAX as usize {
            return Err(Error::invalid(format!("dimension {d} not storable")));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io(path, e));
    emit(&TENSOR_MAGIC)?;
    emit(&TENSOR_VERSION.to_le_bytes())?;
    emit(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        emit(&(d as u32).to_le_bytes())?;
    }
    for v in values {
        emit(&v.to_le_bytes())?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a raw tensor, validating the header and finiteness.
pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut input = BufReader::new(file);
    let mut word = [0u8; 4];
    let mut next = |input: &mut BufReader<File>, what: &str| -> Result<[u8; 4]> {
        input
            .read_exact(&mut word)
            .map_err(|_| Error::format(path, format!("truncated before {what}")))?;
        Ok(word)
    };
    if next(&mut input, "magic")? != TENSOR_MAGIC {
        return Err(Error::format(path, "bad magic, not a tensor file"));
    }
    let version = u32::from_le_bytes(next(&mut input, "version")?);
    if version != TENSOR_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let ndim = u32::from_le_bytes(next(&mut input, "ndim")?) as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::format(path, format!("implausible ndim {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count = 1usize;
    for i in 0..ndim {
        let d = u32::from_le_bytes(next(&mut input, "dims")?) as usize;
        if d == 0 {
            return Err(Error::format(path, format!("dimension {i} is zero")));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::format(path, "dimension product overflows"))?;
        dims.push(d);
    }
    let mut payload = vec![0u8; count * 4];
    input
        .read_exact(&mut payload)
        .map_err(|_| Error::format(path, format!("payload shorter than {count} values")))?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(path, "non-finite value in payload"));
    }
    Ok((dims, values))
}

/// Writes a feature map as an H x W x C tensor plus mask sibling.
///
/// The sibling is only present when needed: fully valid maps get none, and
/// a stale sibling from an earlier write is removed.
pub fn write_feature_map(path: &Path, map: &FeatureMap) -> Result<()> {
    write_tensor(path, &[map.height(), map.width(), map.channels()], map.data())?;
    let sibling = mask_path(path);
    if map.valid_count() < map.pixel_count() {
        let values: Vec<f32> = map.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        write_tensor(&sibling, &[map.height(), map.width()], &values)
    } else {
        match std::fs::remove_file(&sibling) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(&sibling, e)),
        }
    }
}

/// Reads an H x W x C tensor and its mask sibling if present.
pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    let (dims, values) = read_tensor(path)?;
    let [h, w, c] = dims[..] else {
        return Err(Error::format(
            path,
            format!("feature maps are 3-dimensional, found {dims:?}"),
        ));
    };
    let sibling = mask_path(path);
    let mask = if sibling.exists() {
        let (mdims, mvalues) = read_tensor(&sibling)?;
        if mdims != [h, w] {
            return Err(Error::format(
                &sibling,
                format!("mask dims {mdims:?} do not match tensor {h}x{w}"),
            ));
        }
        mvalues
            .iter()
            .map(|&v| {
                if v == 1.0 {
                    Ok(true)
                } else if v == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::format(&sibling, format!("mask value {v} is not 0 or 1")))
                }
            })
            .collect::<Result<Vec<bool>>>()?
    } else {
        vec![true; h * w]
    };
    FeatureMap::from_parts(h, w, c, values, mask)
        .map_err(|e| Error::format(path, e.to_string()))
}

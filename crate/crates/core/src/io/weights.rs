//! Convolution stack weight files.
//!
//! A stack is packed as one tensor of dims `[2, 3, 3, C, C]` (layer, kernel
//! row, kernel column, input channel, output channel) with the biases in a
//! sibling file named by appending `.bias`, dims `[2, C]`. Packing both
//! layers into one tensor forces them to share a channel count, so only
//! square stacks (C in = C out per layer) are representable on disk; the
//! in-memory [`ConvStack`] is more general and non-square configurations,
//! like [`ConvStack::identity`], exist only programmatically.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fusion::{ConvLayer, ConvStack};
use crate::io::tensor::{read_tensor, write_tensor};

/// Sibling file carrying a packed stack's biases.
pub fn bias_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".bias");
    PathBuf::from(name)
}

/// Writes a square stack as a packed weight tensor plus bias sibling.
pub fn write_conv_stack(path: &Path, stack: &ConvStack) -> Result<()> {
    let (l1, l2) = stack.layers();
    let c = l1.c_in();
    if l1.c_out() != c || l2.c_in() != c || l2.c_out() != c {
        return Err(Error::dim(format!(
            "only square stacks are packable, got {}->{} then {}->{}",
            l1.c_in(),
            l1.c_out(),
            l2.c_in(),
            l2.c_out()
        )));
    }
    let mut weights = Vec::with_capacity(2 * 9 * c * c);
    weights.extend_from_slice(l1.weights());
    weights.extend_from_slice(l2.weights());
    write_tensor(path, &[2, 3, 3, c, c], &weights)?;
    let mut biases = Vec::with_capacity(2 * c);
    biases.extend_from_slice(l1.bias());
    biases.extend_from_slice(l2.bias());
    write_tensor(&bias_path(path), &[2, c], &biases)
}

/// Reads a packed weight tensor and its bias sibling into a stack.
pub fn read_conv_stack(path: &Path) -> Result<ConvStack> {
    let (dims, weights) = read_tensor(path)?;
    let [layers, kh, kw, c_in, c_out] = dims[..] else {
        return Err(Error::format(
            path,
            format!("packed stacks are 5-dimensional, found {dims:?}"),
        ));
    };
    if layers != 2 || kh != 3 || kw != 3 {
        return Err(Error::format(
            path,
            format!("expected dims [2, 3, 3, C, C], found {dims:?}"),
        ));
    }
    if c_in != c_out {
        return Err(Error::format(
            path,
            format!("packed stacks must be square, found {c_in} in vs {c_out} out"),
        ));
    }
    let c = c_in;
    let bias_file = bias_path(path);
    let (bdims, biases) = read_tensor(&bias_file)?;
    if bdims != [2, c] {
        return Err(Error::format(
            &bias_file,
            format!("expected bias dims [2, {c}], found {bdims:?}"),
        ));
    }
    let half = 9 * c * c;
    let make = |w: &[f32], b: &[f32]| {
        ConvLayer::new(c, c, w.to_vec(), b.to_vec())
            .map_err(|e| Error::format(path, e.to_string()))
    };
    ConvStack::new(
        make(&weights[..half], &biases[..c])?,
        make(&weights[half..], &biases[c..])?,
    )
}

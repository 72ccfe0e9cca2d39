//! Sequence fusion: per-pixel cross-frame attention over projected frames.
//!
//! After warping, every frame of a ground sequence lives on the same
//! overhead grid, so corresponding pixels are directly comparable. Fusion
//! reduces the N frames to one map by letting each pixel attend across
//! frames: a query/key dot product scores how well frame j's content at a
//! pixel agrees with frame i's, a softmax over j turns the scores into
//! weights, and the weighted average of the value maps keeps what the
//! frames agree on while voting down frame-specific artefacts (occluders,
//! projection smear). [`mean_fuse`] is the unweighted baseline.
//!
//! Queries, keys and values come from [`ConvStack`]s, small two-layer
//! convolutional transforms whose weights arrive from files at run time;
//! [`ConvStack::identity`] provides the deterministic passthrough
//! configuration used by tests.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::FeatureMap;

/// One 3x3 convolution layer with per-output-channel bias.
///
/// Weight layout is `[ky][kx][c_in][c_out]`, row-major, matching the packed
/// tensor file layout (see the io module). Zero padding preserves spatial
/// size; masked pixels read as zero, exactly like padding.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    c_in: usize,
    c_out: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(c_in: usize, c_out: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(Error::dim("convolution needs at least one channel each way"));
        }
        if weights.len() != 9 * c_in * c_out {
            return Err(Error::dim(format!(
                "expected {} kernel weights for 3x3x{c_in}x{c_out}, got {}",
                9 * c_in * c_out,
                weights.len()
            )));
        }
        if bias.len() != c_out {
            return Err(Error::dim(format!(
                "expected {c_out} bias values, got {}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("convolution weights must be finite"));
        }
        Ok(ConvLayer {
            c_in,
            c_out,
            weights,
            bias,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Runs the layer over a dense channel image, skipping masked pixels.
    fn forward(&self, input: &[f32], height: usize, width: usize, valid: &[bool]) -> Vec<f32> {
        let (c_in, c_out) = (self.c_in, self.c_out);
        let mut out = vec![0.0f32; height * width * c_out];
        out.par_chunks_mut(width * c_out)
            .enumerate()
            .for_each(|(y, row)| {
                let mut acc = vec![0.0f64; c_out];
                for x in 0..width {
                    for (co, a) in acc.iter_mut().enumerate() {
                        *a = self.bias[co] as f64;
                    }
                    for ky in 0..3usize {
                        let Some(sy) = (y + ky).checked_sub(1) else {
                            continue;
                        };
                        if sy >= height {
                            continue;
                        }
                        for kx in 0..3usize {
                            let Some(sx) = (x + kx).checked_sub(1) else {
                                continue;
                            };
                            if sx >= width || !valid[sy * width + sx] {
                                continue;
                            }
                            let pixel = &input[(sy * width + sx) * c_in..][..c_in];
                            let taps = &self.weights[(ky * 3 + kx) * c_in * c_out..];
                            for (ci, &v) in pixel.iter().enumerate() {
                                let w = &taps[ci * c_out..][..c_out];
                                for (co, a) in acc.iter_mut().enumerate() {
                                    *a += v as f64 * w[co] as f64;
                                }
                            }
                        }
                    }
                    for (co, a) in acc.iter().enumerate() {
                        row[x * c_out + co] = *a as f32;
                    }
                }
            });
        out
    }
}

/// Two stacked 3x3 convolutions with a ReLU in between.
///
/// Masked pixels behave as zero padding at both layers and stay masked in
/// the output, so invisible regions never influence visible ones.
#[derive(Debug, Clone)]
pub struct ConvStack {
    layer1: ConvLayer,
    layer2: ConvLayer,
}

impl ConvStack {
    pub fn new(layer1: ConvLayer, layer2: ConvLayer) -> Result<Self> {
        if layer2.c_in != layer1.c_out {
            return Err(Error::dim(format!(
                "layer widths do not chain: {} -> {} then {} -> {}",
                layer1.c_in, layer1.c_out, layer2.c_in, layer2.c_out
            )));
        }
        Ok(ConvStack { layer1, layer2 })
    }

    /// Exact passthrough despite the interior ReLU.
    ///
    /// The first layer splits each channel into its positive and negative
    /// parts (center taps +1 and -1 into 2C channels); the second layer
    /// recombines them as relu(x) - relu(-x) = x. Defined for tests and as
    /// the neutral default where no trained weights are supplied.
    pub fn identity(channels: usize) -> Self {
        let c = channels;
        let center = 4; // tap (ky, kx) = (1, 1) of the 3x3 kernel
        let mut w1 = vec![0.0f32; 9 * c * 2 * c];
        for ci in 0..c {
            w1[(center * c + ci) * 2 * c + ci] = 1.0;
            w1[(center * c + ci) * 2 * c + c + ci] = -1.0;
        }
        let mut w2 = vec![0.0f32; 9 * 2 * c * c];
        for co in 0..c {
            w2[(center * 2 * c + co) * c + co] = 1.0;
            w2[(center * 2 * c + c + co) * c + co] = -1.0;
        }
        let layer1 = ConvLayer::new(c, 2 * c, w1, vec![0.0; 2 * c]).expect("static shape");
        let layer2 = ConvLayer::new(2 * c, c, w2, vec![0.0; c]).expect("static shape");
        ConvStack { layer1, layer2 }
    }

    pub fn c_in(&self) -> usize {
        self.layer1.c_in
    }

    pub fn c_out(&self) -> usize {
        self.layer2.c_out
    }

    pub fn layers(&self) -> (&ConvLayer, &ConvLayer) {
        (&self.layer1, &self.layer2)
    }

    /// conv -> ReLU -> conv, preserving the input mask.
    pub fn apply(&self, frame: &FeatureMap) -> Result<FeatureMap> {
        if frame.channels() != self.layer1.c_in {
            return Err(Error::dim(format!(
                "frame has {} channels, stack expects {}",
                frame.channels(), self.layer1.c_in
            )));
        }
        let (h, w) = (frame.height(), frame.width());
        let mut mid = self.layer1.forward(frame.data(), h, w, frame.mask());
        for (i, v) in mid.iter_mut().enumerate() {
            if *v < 0.0 || !frame.mask()[i / self.layer1.c_out] {
                *v = 0.0;
            }
        }
        let mut out = self.layer2.forward(&mid, h, w, frame.mask());
        for (i, v) in out.iter_mut().enumerate() {
            if !frame.mask()[i / self.layer2.c_out] {
                *v = 0.0;
            }
        }
        FeatureMap::from_parts(h, w, self.layer2.c_out, out, frame.mask().to_vec())
    }
}

/// The query, key and value transforms of the attention fusion.
#[derive(Debug, Clone)]
pub struct QkvStacks {
    pub query: ConvStack,
    pub key: ConvStack,
    pub value: ConvStack,
}

impl QkvStacks {
    pub fn new(query: ConvStack, key: ConvStack, value: ConvStack) -> Result<Self> {
        if query.c_out() != key.c_out() {
            return Err(Error::dim(
                "query and key stacks must agree on output channels",
            ));
        }
        Ok(QkvStacks { query, key, value })
    }

    /// Passthrough transforms: Q = K = V = frame.
    pub fn identity(channels: usize) -> Self {
        QkvStacks {
            query: ConvStack::identity(channels),
            key: ConvStack::identity(channels),
            value: ConvStack::identity(channels),
        }
    }
}

/// Applies the three stacks to one frame.
pub fn qkv_transform(
    frame: &FeatureMap,
    stacks: &QkvStacks,
) -> Result<(FeatureMap, FeatureMap, FeatureMap)> {
    Ok((
        stacks.query.apply(frame)?,
        stacks.key.apply(frame)?,
        stacks.value.apply(frame)?,
    ))
}

/// Per-pixel attention weights between N frames.
///
/// `get(i, j, y, x)` is the weight frame i's pixel assigns to frame j's.
/// Rows are softmax-normalized over j: nonnegative, summing to 1 at every
/// pixel where at least one frame is visible. Pixels visible in no frame
/// carry all-zero rows and are flagged invalid.
#[derive(Debug, Clone)]
pub struct AttentionTensor {
    n: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    pixel_valid: Vec<bool>,
}

impl AttentionTensor {
    /// Wraps precomputed weights, checking the softmax invariants.
    pub fn from_values(
        n: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        pixel_valid: Vec<bool>,
    ) -> Result<Self> {
        let hw = height * width;
        if values.len() != n * n * hw || pixel_valid.len() != hw {
            return Err(Error::dim("attention tensor sizes are inconsistent"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("attention weights must be finite and nonnegative"));
        }
        for p in 0..hw {
            for i in 0..n {
                let sum: f64 = (0..n)
                    .map(|j| values[(i * n + j) * hw + p] as f64)
                    .sum();
                let target = if pixel_valid[p] { 1.0 } else { 0.0 };
                if (sum - target).abs() > 1e-5 {
                    return Err(Error::invalid(format!(
                        "attention row (frame {i}, pixel {p}) sums to {sum}, expected {target}"
                    )));
                }
            }
        }
        Ok(AttentionTensor {
            n,
            height,
            width,
            values,
            pixel_valid,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, j: usize, y: usize, x: usize) -> f32 {
        self.values[(i * self.n + j) * self.height * self.width + y * self.width + x]
    }

    pub fn is_pixel_valid(&self, y: usize, x: usize) -> bool {
        self.pixel_valid[y * self.width + x]
    }
}

/// Attention weights from per-pixel query/key dot products.
///
/// The logit between frames i and j at pixel p is the channel dot product
/// `sum_c Q_i[p,c] * K_j[p,c]`; weights are its softmax over j. Frames
/// masked at p are excluded from the softmax entirely (rather than entering
/// with zero logits) so invisible regions get exactly zero weight.
pub fn attention_matrix(queries: &[FeatureMap], keys: &[FeatureMap]) -> Result<AttentionTensor> {
    build_attention(queries, keys, false)
}

/// Like [`attention_matrix`], with logits scaled by `1/sqrt(C)`.
///
/// Off by default; useful when channel counts grow enough to saturate the
/// softmax.
pub fn attention_matrix_scaled(
    queries: &[FeatureMap],
    keys: &[FeatureMap],
) -> Result<AttentionTensor> {
    build_attention(queries, keys, true)
}

fn build_attention(
    queries: &[FeatureMap],
    keys: &[FeatureMap],
    scale_logits: bool,
) -> Result<AttentionTensor> {
    let n = queries.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    if keys.len() != n {
        return Err(Error::dim(format!(
            "{n} query maps but {} key maps",
            keys.len()
        )));
    }
    let first = &queries[0];
    let (h, w, c) = (first.height(), first.width(), first.channels());
    for map in queries.iter().chain(keys) {
        if !map.same_shape(first) {
            return Err(Error::dim("attention inputs must share one shape"));
        }
    }
    let hw = h * w;
    let scale = if scale_logits {
        1.0 / (c as f64).sqrt()
    } else {
        1.0
    };

    let pixel_valid: Vec<bool> = (0..hw)
        .map(|p| keys.iter().any(|k| k.mask()[p]))
        .collect();

    let mut values = vec![0.0f32; n * n * hw];
    values
        .par_chunks_mut(n * hw)
        .enumerate()
        .for_each(|(i, block)| {
            let q = queries[i].data();
            let mut logits = vec![0.0f64; n];
            for p in 0..hw {
                if !pixel_valid[p] {
                    continue;
                }
                let mut max = f64::NEG_INFINITY;
                for (j, key) in keys.iter().enumerate() {
                    if !key.mask()[p] {
                        continue;
                    }
                    let kd = &key.data()[p * c..][..c];
                    let qd = &q[p * c..][..c];
                    let mut dot = 0.0f64;
                    for ch in 0..c {
                        dot += qd[ch] as f64 * kd[ch] as f64;
                    }
                    let l = dot * scale;
                    logits[j] = l;
                    max = max.max(l);
                }
                let mut total = 0.0f64;
                for (j, key) in keys.iter().enumerate() {
                    if key.mask()[p] {
                        total += (logits[j] - max).exp();
                    }
                }
                for (j, key) in keys.iter().enumerate() {
                    if key.mask()[p] {
                        block[j * hw + p] = ((logits[j] - max).exp() / total) as f32;
                    }
                }
            }
        });

    Ok(AttentionTensor {
        n,
        height: h,
        width: w,
        values,
        pixel_valid,
    })
}

/// Fuses value maps under an attention tensor.
///
/// `out[p,c] = (1/N) * sum_i sum_j M[i,j,p] * V_j[p,c]`; the output pixel
/// is valid where at least one frame is.
pub fn attention_fuse(attention: &AttentionTensor, values: &[FeatureMap]) -> Result<FeatureMap> {
    let n = attention.n;
    if values.len() != n {
        return Err(Error::dim(format!(
            "attention covers {n} frames but {} value maps given",
            values.len()
        )));
    }
    let first = &values[0];
    let (h, w, c) = (first.height(), first.width(), first.channels());
    if h != attention.height || w != attention.width {
        return Err(Error::dim("value maps do not match the attention grid"));
    }
    for map in values {
        if !map.same_shape(first) {
            return Err(Error::dim("value maps must share one shape"));
        }
    }
    let hw = h * w;
    let mut data = vec![0.0f32; hw * c];
    let mut mask = vec![false; hw];
    data.par_chunks_mut(w * c)
        .zip(mask.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row_data, row_mask))| {
            for x in 0..w {
                let p = y * w + x;
                row_mask[x] = values.iter().any(|v| v.mask()[p]);
                if !row_mask[x] {
                    continue;
                }
                for ch in 0..c {
                    let mut acc = 0.0f64;
                    for i in 0..n {
                        for (j, v) in values.iter().enumerate() {
                            let m = attention.values[(i * n + j) * hw + p] as f64;
                            if m != 0.0 {
                                acc += m * v.data()[p * c + ch] as f64;
                            }
                        }
                    }
                    row_data[x * c + ch] = (acc / n as f64) as f32;
                }
            }
        });
    FeatureMap::from_parts(h, w, c, data, mask)
}

/// Mask-weighted per-pixel mean of N frames: the no-attention baseline.
pub fn mean_fuse(frames: &[FeatureMap]) -> Result<FeatureMap> {
    let n = frames.len();
    if n == 0 {
        return Err(Error::EmptySequence);
    }
    let first = &frames[0];
    let (h, w, c) = (first.height(), first.width(), first.channels());
    for map in frames {
        if !map.same_shape(first) {
            return Err(Error::dim("frames must share one shape"));
        }
    }
    let hw = h * w;
    let mut data = vec![0.0f32; hw * c];
    let mut mask = vec![false; hw];
    for p in 0..hw {
        let count = frames.iter().filter(|f| f.mask()[p]).count();
        if count == 0 {
            continue;
        }
        mask[p] = true;
        for ch in 0..c {
            let sum: f64 = frames
                .iter()
                .filter(|f| f.mask()[p])
                .map(|f| f.data()[p * c + ch] as f64)
                .sum();
            data[p * c + ch] = (sum / count as f64) as f32;
        }
    }
    FeatureMap::from_parts(h, w, c, data, mask)
}

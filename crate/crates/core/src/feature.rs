//! Dense feature maps with per-pixel validity masks.
//!
//! A [`FeatureMap`] is an `H x W x C` grid of single-precision values plus an
//! `H x W` boolean mask. The mask marks which pixels carry real content;
//! warping, fusion and matching all treat masked pixels as "no observation"
//! rather than as zeros. To keep downstream arithmetic honest the type
//! enforces one invariant throughout: **a masked pixel stores zero data**.
//!
//! Layout is row major with the channel index varying fastest, i.e. the value
//! at `(y, x, c)` lives at `(y * width + x) * channels + c`. This matches the
//! on-disk tensor layout so serialization is a straight copy.

use crate::error::{Error, Result};

/// A 2-D grid of `C`-channel features with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl FeatureMap {
    /// Creates an all-zero map whose every pixel is valid.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
            mask: vec![true; height * width],
        }
    }

    /// Builds a map from raw storage, checking every invariant.
    ///
    /// `data` must hold `height * width * channels` finite values in the
    /// layout described at module level, `mask` one flag per pixel, and every
    /// masked pixel must already store zeros.
    pub fn from_parts(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("feature map dimensions must be nonzero"));
        }
        if data.len() != height * width * channels {
            return Err(Error::dim(format!(
                "feature data holds {} values, expected {}x{}x{} = {}",
                data.len(),
                height,
                width,
                channels,
                height * width * channels
            )));
        }
        if mask.len() != height * width {
            return Err(Error::dim(format!(
                "mask holds {} flags, expected {}x{} = {}",
                mask.len(),
                height,
                width,
                height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature data contains non-finite values"));
        }
        for (p, valid) in mask.iter().enumerate() {
            if !valid && data[p * channels..(p + 1) * channels].iter().any(|&v| v != 0.0) {
                let (y, x) = (p / width, p % width);
                return Err(Error::invalid(format!(
                    "masked pixel ({y}, {x}) carries nonzero data"
                )));
            }
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
            mask,
        })
    }

    /// Builds a fully valid map from data alone.
    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let mask = vec![true; height * width];
        Self::from_parts(height, width, channels, data, mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels (`height * width`).
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Number of valid pixels.
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// The channel slice of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    /// Writes one pixel and marks it valid. Values must be finite.
    pub fn set_pixel(&mut self, y: usize, x: usize, values: &[f32]) {
        assert_eq!(values.len(), self.channels, "channel count mismatch");
        assert!(values.iter().all(|v| v.is_finite()), "non-finite feature value");
        let base = (y * self.width + x) * self.channels;
        self.data[base..base + self.channels].copy_from_slice(values);
        self.mask[y * self.width + x] = true;
    }

    /// Marks one pixel invalid and clears its data.
    pub fn mask_pixel(&mut self, y: usize, x: usize) {
        let base = (y * self.width + x) * self.channels;
        self.data[base..base + self.channels].fill(0.0);
        self.mask[y * self.width + x] = false;
    }

    /// Raw data view (layout: row major, channel fastest).
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Raw mask view (one flag per pixel, row major).
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// True when the two maps have identical height, width and channels.
    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// Stacks same-sized maps along the channel axis.
///
/// The result is valid only where every input is valid; data at pixels that
/// lose validity is cleared so the mask invariant holds.
pub fn stack_channels(maps: &[FeatureMap]) -> Result<FeatureMap> {
    let first = maps.first().ok_or(Error::EmptySequence)?;
    let (h, w) = (first.height, first.width);
    for m in maps {
        if m.height != h || m.width != w {
            return Err(Error::dim(format!(
                "cannot stack {}x{} map with {}x{} map",
                m.height, m.width, h, w
            )));
        }
    }
    let channels: usize = maps.iter().map(|m| m.channels).sum();
    let mut data = vec![0.0f32; h * w * channels];
    let mut mask = vec![true; h * w];
    for (p, ok) in mask.iter_mut().enumerate() {
        *ok = maps.iter().all(|m| m.mask[p]);
        if !*ok {
            continue;
        }
        let mut offset = p * channels;
        for m in maps {
            data[offset..offset + m.channels]
                .copy_from_slice(&m.data[p * m.channels..(p + 1) * m.channels]);
            offset += m.channels;
        }
    }
    FeatureMap::from_parts(h, w, channels, data, mask)
}

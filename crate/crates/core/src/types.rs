//! Dense tensors, images and label maps.
//!
//! Every container is row-major. [`FeatureMap`] is additionally channel-last,
//! so the values belonging to one pixel are contiguous: the flat index of
//! `(y, x, c)` is `(y * width + x) * channels + c`.

use crate::error::{Error, Result};

/// Ground-truth pixels carrying this value are excluded from every metric.
pub const IGNORE_LABEL: u8 = 255;

/// A dense `height × width × channels` map of `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    /// Wraps `data` after checking dimensions, length and finiteness.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Validation(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Validation("feature map dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "feature map {height}x{width}x{channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty feature map");
        assert!(value.is_finite());
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a map by evaluating `f(y, x, c)` at every position.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("from_fn produced an invalid map")
    }

    /// Internal constructor for buffers whose shape is correct by construction.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
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

    /// `(height, width, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.offset(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        let i = self.offset(y, x, c);
        self.data[i] = value;
    }

    /// The channel vector of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Largest and smallest value of channel `c`.
    pub fn channel_range(&self, c: usize) -> (f32, f32) {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Per-pixel index of the largest channel, lowest index on ties.
    pub fn argmax(&self) -> LabelMap {
        let labels = self
            .data
            .chunks_exact(self.channels)
            .map(|px| argmax_lowest(px) as u8)
            .collect();
        LabelMap::from_raw(self.height, self.width, labels)
    }
}

/// Index of the maximum, preferring the lowest index among equal values.
pub(crate) fn argmax_lowest(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// An 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Validation(format!(
                "image {height}x{width} needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        assert!(height > 0 && width > 0, "empty image");
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(height * width * 3)
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data).expect("from_fn produced an invalid image")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// The image as a 3-channel feature map with values in `0..=255`.
    pub fn to_feature_map(&self) -> FeatureMap {
        let data = self.data.iter().map(|&b| b as f32).collect();
        FeatureMap::from_raw(self.height, self.width, 3, data)
    }

    /// Rounds and clamps a 3-channel map back to bytes.
    pub fn from_feature_map(map: &FeatureMap) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::Shape(format!(
                "an RGB image needs 3 channels, got {}",
                map.channels()
            )));
        }
        let data = map
            .as_slice()
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        Self::new(map.height(), map.width(), data)
    }
}

/// One class index per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "label map dimensions must be positive, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Validation(format!(
                "label map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self::new(height, width, vec![label; height * width]).expect("empty label map")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(y, x));
            }
        }
        Self::new(height, width, labels).expect("empty label map")
    }

    pub(crate) fn from_raw(height: usize, width: usize, labels: Vec<u8>) -> Self {
        debug_assert_eq!(labels.len(), height * width);
        Self {
            height,
            width,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn at(&self, p: PixelCoord) -> u8 {
        self.get(p.y, p.x)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    /// Errors unless every label is below `classes` (or is [`IGNORE_LABEL`]
    /// when `allow_ignore` is set).
    pub fn check_classes(&self, classes: usize, allow_ignore: bool) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| (l as usize) >= classes && !(allow_ignore && l == IGNORE_LABEL))
        {
            Some(i) => Err(Error::Validation(format!(
                "label {} at pixel {i} is not below {classes}",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    /// One more than the largest non-ignore label, or 0 if there is none.
    pub fn class_bound(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != IGNORE_LABEL)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }
}

/// A pixel position; `x` is the column and `y` the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelCoord {
    pub x: usize,
    pub y: usize,
}

impl PixelCoord {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn in_bounds(&self, height: usize, width: usize) -> bool {
        self.x < width && self.y < height
    }
}

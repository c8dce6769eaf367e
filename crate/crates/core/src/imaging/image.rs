use serde::{Deserialize, Serialize};

use crate::error::{ComirError, Result};

/// Closed intensity interval an image is normalized into at load time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f32,
    pub hi: f32,
}

impl Default for ValueRange {
    fn default() -> Self {
        ValueRange { lo: 0.0, hi: 1.0 }
    }
}

/// A multichannel 2-D raster stored channel-major (`c × h × w`).
///
/// Coordinates follow raster order: `x` grows to the right along a row,
/// `y` grows downwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    pub modality: String,
    pub value_range: ValueRange,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ComirError::InvalidImage(format!(
                "dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(ComirError::InvalidImage(format!(
                "expected {} values for {channels}x{height}x{width}, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ComirError::InvalidImage(format!(
                "non-finite value at flat index {i}"
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
            modality: String::new(),
            value_range: ValueRange::default(),
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty image");
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
            modality: String::new(),
            value_range: ValueRange::default(),
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        let mut img = Self::zeros(channels, height, width);
        img.data.fill(value);
        img
    }

    /// Builds a single-channel image from a closure over `(x, y)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut img = Self::zeros(1, height, width);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    pub fn with_modality(mut self, modality: impl Into<String>) -> Self {
        self.modality = modality.into();
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Image with the same geometry and metadata but new pixel values.
    pub fn with_data(&self, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Image {
            channels,
            height,
            width,
            data,
            modality: self.modality.clone(),
            value_range: self.value_range,
        }
    }

    /// Selects a subset of channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Image> {
        if channels.is_empty() {
            return Err(ComirError::InvalidImage("empty channel selection".into()));
        }
        let mut data = Vec::with_capacity(channels.len() * self.plane_len());
        for &c in channels {
            if c >= self.channels {
                return Err(ComirError::InvalidImage(format!(
                    "channel {c} out of range for {}-channel image",
                    self.channels
                )));
            }
            data.extend_from_slice(self.plane(c));
        }
        Ok(self.with_data(channels.len(), self.height, self.width, data))
    }

    /// Axis-aligned crop starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(ComirError::OutOfBounds(format!(
                "crop {height}x{width} at ({x0},{y0}) of {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for y in y0..y0 + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
            }
        }
        Ok(self.with_data(self.channels, height, width, data))
    }

    /// Central crop of the requested size.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width {
            return Err(ComirError::OutOfBounds(format!(
                "center crop {height}x{width} larger than {}x{}",
                self.height, self.width
            )));
        }
        self.crop(
            (self.width - width) / 2,
            (self.height - height) / 2,
            height,
            width,
        )
    }

    /// Channel-wise mean, producing a single-channel image.
    pub fn mean_channel(&self) -> Image {
        let n = self.plane_len();
        let mut out = vec![0.0f32; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.channels as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        self.with_data(1, self.height, self.width, out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        let data = self.data.iter().map(|&v| f(v)).collect();
        self.with_data(self.channels, self.height, self.width, data)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        assert_eq!(self.data.len(), other.data.len(), "size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

//! Raster types.
//!
//! [`PixelImage`] holds displayable intensities bounded to `[0, 1]`;
//! [`FieldImage`] holds unbounded diffusion states and noise fields. Both are
//! row-major with interleaved channels and always carry 1 or 3 channels.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::param(format!(
                "images carry 1 or 3 channels, got {}",
                self.channels
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::param(format!("empty image {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Unbounded real-valued raster (diffusion states, noise, gradients).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldImage {
    shape: Shape,
    data: Vec<f64>,
}

impl FieldImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(height, width, channels);
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape("raster data length", shape.len(), data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value {} at element {i}",
                data[i]
            )));
        }
        Ok(FieldImage { shape, data })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        FieldImage { shape, data }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        let shape = Shape::new(height, width, channels);
        FieldImage {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn zeros_like(other: &FieldImage) -> Self {
        Self::filled(other.height(), other.width(), other.channels(), 0.0)
    }

    /// Builds a raster by evaluating `f(row, col, channel)` in storage order.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let shape = Shape::new(height, width, channels);
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        FieldImage { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.shape.width + col) * self.shape.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.data[i] = value;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FieldImage {
        FieldImage {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the `height x width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<FieldImage> {
        if row + height > self.height() || col + width > self.width() || height == 0 || width == 0
        {
            return Err(Error::param(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}",
                self.shape
            )));
        }
        let c = self.channels();
        let mut data = Vec::with_capacity(height * width * c);
        for y in row..row + height {
            let start = self.index(y, col, 0);
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(FieldImage {
            shape: Shape::new(height, width, c),
            data,
        })
    }

    pub fn ensure_same_shape(&self, other: &FieldImage, what: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(what, self.shape, other.shape));
        }
        Ok(())
    }

    /// Clamps into `[0, 1]`, the conversion used before any file write.
    pub fn to_pixel_clamped(&self) -> PixelImage {
        PixelImage(self.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// Displayable raster with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelImage(FieldImage);

impl PixelImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let field = FieldImage::new(height, width, channels, data)?;
        Self::from_field(field)
    }

    pub fn from_field(field: FieldImage) -> Result<Self> {
        if let Some(i) = field.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(format!(
                "pixel value {} at element {i} outside [0, 1]",
                field.data[i]
            )));
        }
        Ok(PixelImage(field))
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::from_field(FieldImage::filled(height, width, channels, value))
    }

    /// Builds an image from `f(row, col, channel)`; values must land in `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let field = FieldImage::from_fn(height, width, channels, f);
        Shape::validate(&field.shape)?;
        Self::from_field(field)
    }

    pub(crate) fn from_field_unchecked(field: FieldImage) -> Self {
        debug_assert!(field.data.iter().all(|v| (0.0..=1.0).contains(v)));
        PixelImage(field)
    }

    pub fn as_field(&self) -> &FieldImage {
        &self.0
    }

    pub fn into_field(self) -> FieldImage {
        self.0
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn channels(&self) -> usize {
        self.0.channels()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.0.get(row, col, channel)
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<PixelImage> {
        self.0.crop(row, col, height, width).map(PixelImage)
    }
}

//! Dense multi-channel images.
//!
//! Samples are stored row-major with channels interleaved (`HWC`): the value
//! of channel `c` at row `y`, column `x` lives at `(y * width + x) * channels + c`.
//! Arithmetic runs in `f64`; the on-disk and on-wire formats carry `f32`.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// PSNR reported when the two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
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

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("dims", format!("empty image {self}")));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(
                "channels",
                format!("expected 1 or 3, got {}", self.channels),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: Dims,
    data: Vec<f64>,
}

impl Image {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples for {dims}", dims.len()),
                actual: format!("{} samples", data.len()),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                for c in 0..dims.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { dims, data }
    }

    /// I.i.d. uniform samples in `[0, 1)`.
    pub fn random_uniform(dims: Dims, rng: &mut Rng) -> Self {
        let data = (0..dims.len()).map(|_| rng.uniform()).collect();
        Self { dims, data }
    }

    /// I.i.d. standard normal samples.
    pub fn random_normal(dims: Dims, rng: &mut Rng) -> Self {
        let data = (0..dims.len()).map(|_| rng.normal()).collect();
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.dims.width + x) * self.dims.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.offset(y, x, c)]
    }

    pub fn ensure_dims(&self, expected: Dims) -> Result<()> {
        if self.dims != expected {
            return Err(Error::DimensionMismatch {
                expected: expected.to_string(),
                actual: self.dims.to_string(),
            });
        }
        Ok(())
    }

    pub fn ensure_same_dims(&self, other: &Image) -> Result<()> {
        other.ensure_dims(self.dims)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.ensure_same_dims(other)?;
        Ok(Image {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Result<Image> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| s * v)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Image, b: f64) -> Result<Image> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Image) -> Result<()> {
        self.ensure_same_dims(other)?;
        for (s, &o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Euclidean norm over all samples.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn distance(&self, other: &Image) -> Result<f64> {
        self.ensure_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamp into `[0, 1]`; non-finite samples become 0.
    pub fn clamped(&self) -> Image {
        self.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl Index<usize> for Image {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Image {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Peak signal-to-noise ratio with unit peak, MSE pooled over all channels.
///
/// Identical images give [`PSNR_CAP_DB`]. The result may be negative.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    reference.ensure_same_dims(test)?;
    let sse: f64 = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mse = sse / reference.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(-10.0 * mse.log10())
}

/// Adds i.i.d. zero-mean Gaussian noise. The result is not clamped.
pub fn add_gaussian_noise(x: &Image, sigma: f64, rng: &mut Rng) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", format!("must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    Ok(x.map_indexed(|_, v| v + sigma * rng.normal()))
}

impl Image {
    fn map_indexed(&self, mut f: impl FnMut(usize, f64) -> f64) -> Image {
        Image {
            dims: self.dims,
            data: self.data.iter().enumerate().map(|(i, &v)| f(i, v)).collect(),
        }
    }
}

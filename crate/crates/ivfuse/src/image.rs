//! Grayscale float-image container shared by the metrics and the classical
//! baseline, plus 8-bit quantization.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Grayscale image with float values, nominally in [0,255].
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FloatImage {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {h}x{w}"
            )));
        }
        if data.len() != h * w {
            return Err(Error::InvalidArgument(format!(
                "image data length {} does not match {h}x{w}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite pixel at index {pos} in {h}x{w} image"
            )));
        }
        Ok(FloatImage { h, w, data })
    }

    /// From a (1,1,h,w) tensor with values in [0,1]: scales by 255.
    pub fn from_unit_tensor(t: &Tensor4) -> Result<Self> {
        if t.n() != 1 || t.c() != 1 {
            return Err(Error::InvalidArgument(format!(
                "expected a (1,1,h,w) tensor, got {}",
                t.shape_string()
            )));
        }
        let data = t.data().iter().map(|&v| v as f64 * 255.0).collect();
        FloatImage::new(t.h(), t.w(), data)
    }

    /// From raw 8-bit pixels.
    pub fn from_gray8(h: usize, w: usize, pixels: &[u8]) -> Result<Self> {
        FloatImage::new(h, w, pixels.iter().map(|&p| p as f64).collect())
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// 8-bit quantization: round half away from zero, clamp to [0,255].
    pub fn quantize(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

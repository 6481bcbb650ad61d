//! Dense HWC tensors of 32-bit reals.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// `(height, width, channels)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.h * self.w
    }
}

/// Row-major `(y, x, channel)` tensor. Images hold values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            bail!(
                Input,
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            );
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail!(Numeric, "non-finite value at flat index {i}");
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.w + x) * self.shape.c + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.shape.c]
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Snaps every value onto the 8-bit grid `k / 255`.
    ///
    /// Mutants are quantized before evaluation so that what is evaluated is
    /// exactly what a PNG round trip reproduces.
    pub fn quantize_u8(&self) -> Self {
        self.map(|v| to_u8(v) as f32 / 255.0)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_u8(shape: Shape, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != shape.len() {
            bail!(
                Input,
                "byte length {} does not match shape {:?}",
                bytes.len(),
                shape
            );
        }
        Ok(Self {
            shape,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    /// Mean of each channel over all pixels, accumulated in 64 bits.
    pub fn channel_means(&self) -> Vec<f64> {
        let c = self.shape.c;
        let mut sums = vec![0.0f64; c];
        for px in self.data.chunks_exact(c) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64;
            }
        }
        let n = self.shape.pixels().max(1) as f64;
        sums.iter().map(|s| s / n).collect()
    }
}

/// Rounds a `[0, 1]` value to the nearest 8-bit level (clamping first).
#[inline]
pub fn to_u8(v: f32) -> u8 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_length_and_nan() {
        let s = Shape::new(2, 2, 1);
        assert!(Tensor::from_vec(s, vec![0.0; 3]).is_err());
        assert!(matches!(
            Tensor::from_vec(s, vec![0.0, f32::NAN, 0.0, 0.0]),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn quantize_is_u8_roundtrip() {
        let t = Tensor::from_vec(Shape::new(1, 3, 1), vec![0.1234, 0.5, 0.999]).unwrap();
        let q = t.quantize_u8();
        let back = Tensor::from_u8(q.shape(), &q.to_u8()).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn hwc_layout() {
        let mut t = Tensor::zeros(Shape::new(2, 3, 2));
        t.set(1, 2, 1, 5.0);
        assert_eq!(t.data()[(1 * 3 + 2) * 2 + 1], 5.0);
        assert_eq!(t.pixel(1, 2), &[0.0, 5.0]);
    }
}

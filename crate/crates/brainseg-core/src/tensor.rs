//! Dense row-major N-dimensional tensors.
//!
//! Canonical layouts: images and feature maps are `[batch, channels, height,
//! width]`; convolution kernels are `[out_ch, in_ch, kh, kw]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::Element;

/// Dense row-major tensor of `E` elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor from a shape and matching element buffer.
    pub fn new(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::contract(
                "tensor",
                format!("all extents must be >= 1, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![E::ZERO; numel] }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: E) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// The single element of a `[1]` tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::contract(
                "item",
                format!("expected scalar, got shape {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// Interprets the shape as `[n, c, h, w]`.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(Error::shape(op, format!("expected rank-4 tensor, got {other:?}"))),
        }
    }

    #[inline]
    pub fn at4(&self, (n, c, h, w): (usize, usize, usize, usize), i: (usize, usize, usize, usize)) -> E {
        let _ = n;
        self.data[((i.0 * c + i.1) * h + i.2) * w + i.3]
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-type conversion through `f64`.
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    /// Fills the tensor with seeded normal draws scaled by `std`.
    pub fn fill_normal(&mut self, rng: &mut crate::rng::SeedRng, std: f64) {
        for v in self.data.iter_mut() {
            *v = E::from_f64(rng.normal_with_std(std));
        }
    }
}

/// Integer class-label map of shape `[n, h, w]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if n * h * w != data.len() {
            return Err(Error::shape(
                "label_map",
                format!("[{n},{h},{w}] needs {} elements, got {}", n * h * w, data.len()),
            ));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_buffer() {
        let err = Tensor::<f32>::new(&[2, 2], vec![1.0; 3]).unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("[2, 2]"), "message should carry the shape: {msg}");
    }

    #[test]
    fn new_rejects_zero_extent() {
        assert!(Tensor::<f32>::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::<f32>::new(&[1, 2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        let dims = t.dims4("test").unwrap();
        assert_eq!(t.at4(dims, (0, 1, 0, 1)), 5.0);
        assert_eq!(t.at4(dims, (0, 1, 1, 0)), 6.0);
    }

    #[test]
    fn cast_roundtrip_preserves_f32_values() {
        let t = Tensor::<f32>::new(&[3], vec![0.1, -2.5, 3.75]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }
}

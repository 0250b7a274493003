//! Dense row-major f64 tensors.
//!
//! The whole crate runs on one concrete container: a contiguous `Vec<f64>`
//! plus a shape. Four-dimensional tensors follow the batch x channels x
//! height x width convention. There is no broadcasting and no views; ops
//! return freshly allocated values.
//!
//! Invariants: `data.len()` equals the product of the extents, every extent
//! is at least 1, and every stored value is finite after any public
//! operation.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let len = shape.iter().product();
        Ok(Tensor { shape: shape.to_vec(), data: vec![0.0; len] })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite { context: "Tensor::filled" });
        }
        validate_shape(shape)?;
        let len = shape.iter().product();
        Ok(Tensor { shape: shape.to_vec(), data: vec![value; len] })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        validate_shape(shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::DataLength { expected, got: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "Tensor::from_vec" });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Builds a tensor by evaluating `f` at every row-major flat index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        validate_shape(shape)?;
        let len = shape.iter().product();
        let data: Vec<f64> = (0..len).map(&mut f).collect();
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "Tensor::from_fn" });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        // Extents are >= 1, so a constructed tensor is never empty.
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The four extents of a B x C x H x W tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::Rank { expected: 4, shape: self.shape.clone() }),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [h, w] => Ok((h, w)),
            _ => Err(Error::Rank { expected: 2, shape: self.shape.clone() }),
        }
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 4);
        let (ch, h, w) = (self.shape[1], self.shape[2], self.shape[3]);
        debug_assert!(b < self.shape[0] && c < ch && y < h && x < w);
        self.data[((b * ch + c) * h + y) * w + x]
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(index)?])
    }

    fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len()
            || index.iter().zip(&self.shape).any(|(i, s)| i >= s)
        {
            return Err(Error::OutOfBounds {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        let mut flat = 0;
        for (i, s) in index.iter().zip(&self.shape) {
            flat = flat * s + i;
        }
        Ok(flat)
    }

    pub fn elementwise_add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_vec(&self.shape, data)
    }

    /// In-place accumulation; shapes must already agree (internal use).
    pub(crate) fn accumulate(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|v| v * factor).collect();
        Tensor::from_vec(&self.shape, data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Stacks `other` after `self` along the channel axis.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        let (b, c1, h, w) = self.dims4()?;
        let (b2, c2, h2, w2) = other.dims4()?;
        if b != b2 || h != h2 || w != w2 {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(b * (c1 + c2) * plane);
        for bi in 0..b {
            let s = bi * c1 * plane;
            data.extend_from_slice(&self.data[s..s + c1 * plane]);
            let o = bi * c2 * plane;
            data.extend_from_slice(&other.data[o..o + c2 * plane]);
        }
        Tensor::from_vec(&[b, c1 + c2, h, w], data)
    }

    /// Copies channels `range.start..range.end` into a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let (b, c, h, w) = self.dims4()?;
        if start >= end || end > c {
            return Err(Error::ChannelRange { start, end, channels: c });
        }
        let plane = h * w;
        let nc = end - start;
        let mut data = Vec::with_capacity(b * nc * plane);
        for bi in 0..b {
            let s = (bi * c + start) * plane;
            data.extend_from_slice(&self.data[s..s + nc * plane]);
        }
        Tensor::from_vec(&[b, nc, h, w], data)
    }

    /// One H x W plane of a 4-d tensor as a 2-d tensor.
    pub fn plane(&self, b: usize, c: usize) -> Result<Tensor> {
        let (bs, cs, h, w) = self.dims4()?;
        if b >= bs || c >= cs {
            return Err(Error::OutOfBounds {
                index: vec![b, c],
                shape: self.shape.clone(),
            });
        }
        let s = (b * cs + c) * h * w;
        Tensor::from_vec(&[h, w], self.data[s..s + h * w].to_vec())
    }

    pub(crate) fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::BadShape { shape: shape.to_vec() });
    }
    Ok(())
}

/// Largest relative elementwise difference, guarding small magnitudes.
pub fn max_relative_diff(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_has_expected_volume_and_sum() {
        let t = Tensor::zeros(&[2, 3, 4, 4]).unwrap();
        assert_eq!(t.len(), 96);
        assert_eq!(t.sum(), 0.0);
    }

    #[test]
    fn from_vec_rejects_wrong_length_naming_both_sizes() {
        let err = Tensor::from_vec(&[2, 2], vec![1.0; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains('5'), "got: {msg}");
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn zero_extent_shapes_are_rejected() {
        assert!(Tensor::zeros(&[2, 0, 3]).is_err());
        assert!(Tensor::zeros(&[]).is_err());
    }

    #[test]
    fn add_requires_matching_shapes() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[3, 2]).unwrap();
        assert!(a.elementwise_add(&b).is_err());
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let a = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64).unwrap();
        let b = Tensor::from_fn(&[2, 2, 2, 2], |i| 100.0 + i as f64).unwrap();
        let cat = a.concat_channels(&b).unwrap();
        assert_eq!(cat.shape(), &[2, 5, 2, 2]);
        assert_eq!(cat.slice_channels(0, 3).unwrap(), a);
        assert_eq!(cat.slice_channels(3, 5).unwrap(), b);
    }

    #[test]
    fn plane_extracts_row_major_block() {
        let t = Tensor::from_fn(&[1, 2, 2, 3], |i| i as f64).unwrap();
        let p = t.plane(0, 1).unwrap();
        assert_eq!(p.shape(), &[2, 3]);
        assert_eq!(p.data(), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    proptest! {
        #[test]
        fn prop_add_commutes_and_zero_is_identity(
            shape in prop::collection::vec(1usize..=4, 1..=4),
            seed in 0u64..1000,
        ) {
            let len: usize = shape.iter().product();
            let mut s = seed;
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let a = Tensor::from_fn(&shape, |_| next()).unwrap();
            let b = Tensor::from_fn(&shape, |_| next()).unwrap();
            let z = Tensor::zeros(&shape).unwrap();
            prop_assert_eq!(a.elementwise_add(&b).unwrap(), b.elementwise_add(&a).unwrap());
            prop_assert_eq!(a.elementwise_add(&z).unwrap(), a.clone());
            prop_assert_eq!(a.len(), len);
        }
    }
}

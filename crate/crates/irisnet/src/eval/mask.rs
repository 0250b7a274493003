//! Binary masks, thresholding, and the IOU family.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// H×W grid of {0,1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize) -> Self {
        BinaryMask { h, w, data: vec![0; h * w] }
    }

    /// Builds from rows of '0'/'1' characters; handy for fixtures.
    pub fn from_rows(rows: &[&str]) -> Self {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        let mut m = BinaryMask::new(h, w);
        for (y, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), w, "ragged mask rows");
            for (x, ch) in row.bytes().enumerate() {
                m.data[y * w + x] = match ch {
                    b'0' => 0,
                    b'1' => 1,
                    other => panic!("mask rows must be 0/1, got {:?}", other as char),
                };
            }
        }
        m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    /// Out-of-bounds reads are background; simplifies neighborhood scans.
    #[inline]
    pub fn at(&self, y: isize, x: isize) -> u8 {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            0
        } else {
            self.data[y as usize * self.w + x as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn subset_of(&self, other: &BinaryMask) -> bool {
        self.h == other.h
            && self.w == other.w
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    /// Foreground coordinates in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.w;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(move |(i, _)| (i / w, i % w))
    }

    fn check_same_size(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::MaskSize { left: self.dims(), right: other.dims() });
        }
        Ok(())
    }
}

/// Thresholds a foreground-probability plane: 1 iff p >= tau.
pub fn binarize(prob: &Tensor, tau: f64) -> Result<BinaryMask> {
    let (h, w) = prob.dims2()?;
    if !tau.is_finite() || tau <= 0.0 || tau >= 1.0 {
        return Err(Error::BadThreshold { got: tau });
    }
    let mut m = BinaryMask::new(h, w);
    for (i, &p) in prob.data().iter().enumerate() {
        m.data[i] = (p >= tau) as u8;
    }
    Ok(m)
}

/// Intersection over union; two empty masks count as a perfect match.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_size(b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Threshold-free overlap: sum of pixelwise min over sum of pixelwise max.
/// Reduces to [`iou`] when `prob` is itself binary.
pub fn soft_iou(prob: &Tensor, target: &BinaryMask) -> Result<f64> {
    let (h, w) = prob.dims2()?;
    if (h, w) != target.dims() {
        return Err(Error::MaskSize { left: (h, w), right: target.dims() });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&p, &t) in prob.data().iter().zip(&target.data) {
        let t = t as f64;
        num += p.min(t);
        den += p.max(t);
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

/// Mean IOU across prediction/ground-truth pairs.
pub fn miou(pairs: &[(&BinaryMask, &BinaryMask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Msg("miou over an empty sequence".into()));
    }
    let mut total = 0.0;
    for (p, t) in pairs {
        total += iou(p, t)?;
    }
    Ok(total / pairs.len() as f64)
}

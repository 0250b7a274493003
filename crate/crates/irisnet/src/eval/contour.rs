//! Contour extraction from skeletons and the Mean-Sum-of-Distances metric.

use crate::error::{Error, Result};

use super::mask::BinaryMask;
use super::skeleton::largest_component;

/// Ordered (row, col) pixel chain, one point per occupied column, columns
/// non-decreasing left to right.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contour {
    points: Vec<(usize, usize)>,
}

impl Contour {
    /// Validates the contour invariants: at least two points, columns
    /// non-decreasing, no duplicates.
    pub fn new(points: Vec<(usize, usize)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateContour { got: points.len() });
        }
        for pair in points.windows(2) {
            if pair[1].1 < pair[0].1 {
                return Err(Error::Msg(format!(
                    "contour columns must be non-decreasing, got {:?} after {:?}",
                    pair[1], pair[0]
                )));
            }
            if pair[1] == pair[0] {
                return Err(Error::Msg(format!("duplicate contour point {:?}", pair[0])));
            }
        }
        Ok(Contour { points })
    }

    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// (row, col) as reals, for metric computations against sub-pixel
    /// reference curves.
    pub fn to_f64(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|&(r, c)| (r as f64, c as f64)).collect()
    }
}

/// Half-up rounding to a row index: .5 goes to the larger row.
fn round_row(mean: f64) -> usize {
    (mean + 0.5).floor() as usize
}

/// Reduces a skeleton to an ordered contour: keep the largest 8-connected
/// component, then emit one point per occupied column at that column's mean
/// skeleton row, left to right.
pub fn mask_to_contour(skeleton: &BinaryMask) -> Result<Contour> {
    if skeleton.is_empty() {
        return Err(Error::NoContour);
    }
    let main = largest_component(skeleton);
    let (h, w) = main.dims();
    let mut points = Vec::new();
    for x in 0..w {
        let mut sum = 0usize;
        let mut n = 0usize;
        for y in 0..h {
            if main.get(y, x) {
                sum += y;
                n += 1;
            }
        }
        if n > 0 {
            points.push((round_row(sum as f64 / n as f64), x));
        }
    }
    Contour::new(points)
}

/// Mean Sum of Distances between two point sets, in pixels: nearest-neighbor
/// distances accumulated in both directions, divided by the total point
/// count. Symmetric by construction.
pub fn msd(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::NoContour);
    }
    fn one_way(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
        let mut total = 0.0;
        for &(ry, rx) in from {
            let mut best = f64::INFINITY;
            for &(sy, sx) in to {
                let d2 = (ry - sy).powi(2) + (rx - sx).powi(2);
                if d2 < best {
                    best = d2;
                }
            }
            total += best.sqrt();
        }
        total
    }
    Ok((one_way(a, b) + one_way(b, a)) / (a.len() + b.len()) as f64)
}

/// Pixel distance to physical distance.
pub fn px_to_mm(px: f64, mm_per_px: f64) -> f64 {
    px * mm_per_px
}

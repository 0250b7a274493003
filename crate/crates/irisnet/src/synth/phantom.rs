//! Phantom generator: a bright, thick, smooth curve (the "tongue") over a
//! dark speckled background, with optional dim curved distractors.
//!
//! Geometry is exact: the foreground mask and the centerline come from the
//! same generating curve that draws the image, so metric code can be tested
//! against known ground truth. The image is the only place noise enters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Contour;
use crate::rng::{derive_seed, seeded_rng, stream};
use crate::tensor::Tensor;

use super::SegmentationSample;

/// Gray level of the clean background; the band brightness must exceed it.
pub const BACKGROUND_LEVEL: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomParams {
    pub height: usize,
    pub width: usize,
    /// Spline control points across the width; more points, wigglier curve.
    pub control_points: usize,
    /// Vertical region (fractions of height) the control points sample.
    pub band_low: f64,
    pub band_high: f64,
    /// Band thickness is drawn uniformly from this inclusive pixel range.
    pub thickness_min: usize,
    pub thickness_max: usize,
    /// Band gray level, drawn uniformly from this range.
    pub brightness_min: f64,
    pub brightness_max: f64,
    /// Side of one speckle grain in pixels.
    pub speckle_grain: usize,
    /// Variance of the multiplicative speckle field (0 = clean image).
    pub speckle_variance: f64,
    /// Shadow distractor count is drawn uniformly from 0..=this.
    pub shadow_count_max: usize,
    /// Peak gray level of shadow distractors.
    pub shadow_intensity: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            height: 128,
            width: 128,
            control_points: 5,
            band_low: 0.45,
            band_high: 0.80,
            thickness_min: 4,
            thickness_max: 8,
            brightness_min: 0.7,
            brightness_max: 1.0,
            speckle_grain: 4,
            speckle_variance: 0.02,
            shadow_count_max: 3,
            shadow_intensity: 0.35,
            seed: 0,
        }
    }
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::BadPhantom { detail });
        if self.height < 16 || self.width < 16 {
            return bad(format!("image {}x{} too small (min 16)", self.height, self.width));
        }
        if self.control_points < 2 {
            return bad(format!("need >= 2 control points, got {}", self.control_points));
        }
        if self.thickness_min < 2 || self.thickness_min > self.thickness_max {
            return bad(format!(
                "thickness range {}..={} invalid (min 2, non-empty)",
                self.thickness_min, self.thickness_max
            ));
        }
        if !(self.brightness_min > BACKGROUND_LEVEL
            && self.brightness_min <= self.brightness_max
            && self.brightness_max <= 1.0)
        {
            return bad(format!(
                "brightness range {}..={} must sit in ({BACKGROUND_LEVEL}, 1]",
                self.brightness_min, self.brightness_max
            ));
        }
        if self.speckle_grain == 0 {
            return bad("speckle grain must be >= 1".into());
        }
        if !self.speckle_variance.is_finite() || self.speckle_variance < 0.0 {
            return bad(format!("speckle variance {} must be >= 0", self.speckle_variance));
        }
        if !(0.0..1.0).contains(&self.shadow_intensity) {
            return bad(format!("shadow intensity {} must be in [0,1)", self.shadow_intensity));
        }
        let h = self.height as f64;
        let half = self.thickness_max as f64 / 2.0;
        let lo = self.band_low * h - half;
        let hi = self.band_high * h + half;
        if !(self.band_low > 0.0 && self.band_low < self.band_high && self.band_high < 1.0)
            || lo < 1.0
            || hi > h - 2.0
        {
            return bad(format!(
                "band region [{}, {}] with thickness {} does not fit strictly inside height {}",
                self.band_low, self.band_high, self.thickness_max, self.height
            ));
        }
        Ok(())
    }
}

/// Catmull-Rom spline through control rows pinned at evenly spaced columns;
/// returns the row for column `x`. Single-valued in x by construction.
fn spline_row(ctrl: &[f64], width: usize, x: f64) -> f64 {
    let n = ctrl.len();
    if n == 1 {
        return ctrl[0];
    }
    let seg_w = (width - 1) as f64 / (n - 1) as f64;
    let s = (x / seg_w).min((n - 2) as f64).max(0.0);
    let i = s.floor() as usize;
    let t = s - i as f64;
    let at = |j: isize| ctrl[j.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    0.5 * ((2.0 * p1)
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
}

/// One standard-normal draw (Box-Muller).
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

/// Pixel value of the speckle field at (y, x): bilinear interpolation of a
/// coarse grid of gaussian grain values.
fn speckle_at(grid: &[f64], gw: usize, grain: usize, y: usize, x: usize) -> f64 {
    let gy = y / grain;
    let gx = x / grain;
    let ty = (y % grain) as f64 / grain as f64;
    let tx = (x % grain) as f64 / grain as f64;
    let v00 = grid[gy * gw + gx];
    let v01 = grid[gy * gw + gx + 1];
    let v10 = grid[(gy + 1) * gw + gx];
    let v11 = grid[(gy + 1) * gw + gx + 1];
    let top = v00 + (v01 - v00) * tx;
    let bot = v10 + (v11 - v10) * tx;
    top + (bot - top) * ty
}

/// Deterministic phantom: equal params give byte-identical samples.
pub fn generate_phantom(params: &PhantomParams) -> Result<SegmentationSample> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let hf = h as f64;
    let mut rng = seeded_rng(derive_seed(params.seed, stream::PHANTOM, 0));

    // Draw order is part of the format: thickness, brightness, control rows,
    // shadows, speckle grid.
    let thickness = rng.random_range(params.thickness_min..=params.thickness_max);
    let brightness = uniform(&mut rng, params.brightness_min, params.brightness_max);
    let half = thickness as f64 / 2.0;
    let lo_row = half + 1.0;
    let hi_row = hf - 2.0 - half;
    let ctrl: Vec<f64> = (0..params.control_points)
        .map(|_| uniform(&mut rng, params.band_low * hf, params.band_high * hf).clamp(lo_row, hi_row))
        .collect();

    let shadow_count = rng.random_range(0..=params.shadow_count_max);
    struct Shadow {
        ctrl: [f64; 3],
        half: f64,
        level: f64,
    }
    let shadows: Vec<Shadow> = (0..shadow_count)
        .map(|_| Shadow {
            ctrl: [
                uniform(&mut rng, 0.05 * hf, 0.95 * hf),
                uniform(&mut rng, 0.05 * hf, 0.95 * hf),
                uniform(&mut rng, 0.05 * hf, 0.95 * hf),
            ],
            half: uniform(&mut rng, 1.0, 2.5),
            level: params.shadow_intensity * uniform(&mut rng, 0.6, 1.0),
        })
        .collect();

    let grain = params.speckle_grain;
    let gh = (h - 1) / grain + 2;
    let gw = (w - 1) / grain + 2;
    let sigma = params.speckle_variance.sqrt();
    let grid: Vec<f64> = (0..gh * gw).map(|_| sigma * gaussian(&mut rng)).collect();

    // Curve row per column, and the exact band membership derived from it.
    let rows: Vec<f64> = (0..w).map(|x| spline_row(&ctrl, w, x as f64).clamp(lo_row, hi_row)).collect();

    let mut image = vec![0.0f64; h * w];
    let mut fg = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let in_band = (y as f64 - rows[x]).abs() <= half;
            let mut v = if in_band { brightness } else { BACKGROUND_LEVEL };
            if !in_band {
                for s in &shadows {
                    let sy = spline_row(&s.ctrl, w, x as f64);
                    if (y as f64 - sy).abs() <= s.half {
                        v = v.max(s.level);
                    }
                }
            }
            if params.speckle_variance > 0.0 {
                v *= 1.0 + speckle_at(&grid, gw, grain, y, x);
            }
            image[y * w + x] = v.clamp(0.0, 1.0);
            if in_band {
                fg[y * w + x] = 1.0;
            }
        }
    }

    let mut mask = vec![0.0f64; 2 * h * w];
    for i in 0..h * w {
        mask[i] = 1.0 - fg[i];
        mask[h * w + i] = fg[i];
    }

    let points: Vec<(usize, usize)> =
        (0..w).map(|x| ((rows[x] + 0.5).floor() as usize, x)).collect();

    Ok(SegmentationSample {
        image: Tensor::from_vec(&[h, w], image)?,
        mask: Tensor::from_vec(&[2, h, w], mask)?,
        centerline: Contour::new(points)?,
    })
}

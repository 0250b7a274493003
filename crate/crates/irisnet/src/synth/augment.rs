//! Online geometric augmentation: flip, rotation, translation, zoom — one
//! affine map applied identically to image, mask, and centerline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Contour;
use crate::tensor::Tensor;

use super::SegmentationSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    /// Probability of a horizontal flip.
    pub flip_probability: f64,
    /// Rotation drawn from [-max, max] degrees; at most 25.
    pub max_rotation_deg: f64,
    /// Translation drawn from [-max, max] pixels per axis; at most 40.
    pub max_shift_px: f64,
    /// Zoom factor range, within [0.5, 1.5].
    pub zoom_min: f64,
    pub zoom_max: f64,
}

/// Defaults are aggressive, sized for 128-pixel frames; scale them down
/// with the frame (see `identity` for none at all).
impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            flip_probability: 0.5,
            max_rotation_deg: 25.0,
            max_shift_px: 40.0,
            zoom_min: 0.5,
            zoom_max: 1.5,
        }
    }
}

impl AugmentRanges {
    /// No-op configuration: the augmented sample equals the input bit for
    /// bit.
    pub fn identity() -> Self {
        AugmentRanges {
            flip_probability: 0.0,
            max_rotation_deg: 0.0,
            max_shift_px: 0.0,
            zoom_min: 1.0,
            zoom_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, detail: String| Err(Error::BadConfig { field, detail });
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad("flip_probability", format!("{} not in [0,1]", self.flip_probability));
        }
        if !(0.0..=25.0).contains(&self.max_rotation_deg) {
            return bad("max_rotation_deg", format!("{} not in [0,25]", self.max_rotation_deg));
        }
        if !(0.0..=40.0).contains(&self.max_shift_px) {
            return bad("max_shift_px", format!("{} not in [0,40]", self.max_shift_px));
        }
        if !(self.zoom_min >= 0.5 && self.zoom_min <= self.zoom_max && self.zoom_max <= 1.5) {
            return bad(
                "zoom",
                format!("[{}, {}] not within [0.5, 1.5]", self.zoom_min, self.zoom_max),
            );
        }
        Ok(())
    }
}

/// Row-major affine map (y, x) -> (ayy*y + ayx*x + ty, axy*y + axx*x + tx).
#[derive(Clone, Copy, Debug)]
struct Affine {
    ayy: f64,
    ayx: f64,
    ty: f64,
    axy: f64,
    axx: f64,
    tx: f64,
}

impl Affine {
    fn identity() -> Self {
        Affine { ayy: 1.0, ayx: 0.0, ty: 0.0, axy: 0.0, axx: 1.0, tx: 0.0 }
    }

    fn apply(&self, y: f64, x: f64) -> (f64, f64) {
        (
            self.ayy * y + self.ayx * x + self.ty,
            self.axy * y + self.axx * x + self.tx,
        )
    }

    /// `self` after `first`.
    fn after(&self, first: &Affine) -> Affine {
        Affine {
            ayy: self.ayy * first.ayy + self.ayx * first.axy,
            ayx: self.ayy * first.ayx + self.ayx * first.axx,
            ty: self.ayy * first.ty + self.ayx * first.tx + self.ty,
            axy: self.axy * first.ayy + self.axx * first.axy,
            axx: self.axy * first.ayx + self.axx * first.axx,
            tx: self.axy * first.ty + self.axx * first.tx + self.tx,
        }
    }

    fn translate(dy: f64, dx: f64) -> Self {
        Affine { ty: dy, tx: dx, ..Affine::identity() }
    }

    fn rotate_about(rad: f64, cy: f64, cx: f64) -> Self {
        let (s, c) = rad.sin_cos();
        // p' = c + R (p - c)
        Affine {
            ayy: c,
            ayx: -s,
            ty: cy - c * cy + s * cx,
            axy: s,
            axx: c,
            tx: cx - s * cy - c * cx,
        }
    }

    fn scale_about(f: f64, cy: f64, cx: f64) -> Self {
        Affine {
            ayy: f,
            ayx: 0.0,
            ty: cy * (1.0 - f),
            axy: 0.0,
            axx: f,
            tx: cx * (1.0 - f),
        }
    }

    fn hflip(width: usize) -> Self {
        Affine { ayy: 1.0, ayx: 0.0, ty: 0.0, axy: 0.0, axx: -1.0, tx: (width - 1) as f64 }
    }
}

/// Bilinear read with zero fill outside the image. Integer coordinates
/// reproduce the stored value exactly.
fn bilinear(data: &[f64], h: usize, w: usize, sy: f64, sx: f64) -> f64 {
    let y0 = sy.floor();
    let x0 = sx.floor();
    let fy = sy - y0;
    let fx = sx - x0;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let weight = wy * wx;
            if weight == 0.0 {
                continue;
            }
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                acc += weight * data[yy as usize * w + xx as usize];
            }
        }
    }
    acc
}

struct DrawnTransform {
    forward: Affine,
    backward: Affine,
}

/// Draws one transform. The five underlying uniforms are always consumed in
/// the same order (flip, angle, shift-y, shift-x, zoom), so a given rng
/// stream yields the same transform regardless of which ranges happen to be
/// degenerate.
fn draw_transform<R: Rng>(rng: &mut R, ranges: &AugmentRanges, h: usize, w: usize) -> DrawnTransform {
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);

    let u_flip: f64 = rng.random();
    let u_angle: f64 = rng.random();
    let u_sy: f64 = rng.random();
    let u_sx: f64 = rng.random();
    let u_zoom: f64 = rng.random();

    let flip = u_flip < ranges.flip_probability;
    let angle = (2.0 * u_angle - 1.0) * ranges.max_rotation_deg.to_radians();
    let shift_y = (2.0 * u_sy - 1.0) * ranges.max_shift_px;
    let shift_x = (2.0 * u_sx - 1.0) * ranges.max_shift_px;
    let zoom = ranges.zoom_min + u_zoom * (ranges.zoom_max - ranges.zoom_min);

    // Forward map: flip, then zoom and rotation about the center, then
    // shift. The sampler walks it backwards (output pixel -> source point).
    let mut forward = Affine::identity();
    if flip {
        forward = Affine::hflip(w).after(&forward);
    }
    forward = Affine::scale_about(zoom, cy, cx).after(&forward);
    forward = Affine::rotate_about(angle, cy, cx).after(&forward);
    forward = Affine::translate(shift_y, shift_x).after(&forward);

    let mut backward = Affine::identity();
    backward = Affine::translate(-shift_y, -shift_x).after(&backward);
    backward = Affine::rotate_about(-angle, cy, cx).after(&backward);
    backward = Affine::scale_about(1.0 / zoom, cy, cx).after(&backward);
    if flip {
        backward = Affine::hflip(w).after(&backward);
    }

    DrawnTransform { forward, backward }
}

/// Applies the transform to image and mask planes; returns (image, fg).
fn raster(sample: &SegmentationSample, t: &DrawnTransform, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut image = vec![0.0; h * w];
    let src_fg = &sample.mask.data()[h * w..];
    let mut fg = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = t.backward.apply(y as f64, x as f64);
            image[y * w + x] = bilinear(sample.image.data(), h, w, sy, sx).clamp(0.0, 1.0);
            // Foreground is interpolated then re-binarized; background is
            // its complement, which keeps the channels consistent even in
            // zero-filled regions.
            fg[y * w + x] = (bilinear(src_fg, h, w, sy, sx) >= 0.5) as u8 as f64;
        }
    }
    (image, fg)
}

fn complement_stack(fg: &[f64], h: usize, w: usize) -> Result<Tensor> {
    let mut mask = vec![0.0; 2 * h * w];
    for i in 0..h * w {
        mask[i] = 1.0 - fg[i];
        mask[h * w + i] = fg[i];
    }
    Tensor::from_vec(&[2, h, w], mask)
}

/// Draws one transform from `ranges` and applies it to every field of the
/// sample. An extreme-but-legal transform can carry the whole centerline out
/// of frame; that surfaces as a degenerate-contour error.
pub fn augment<R: Rng>(
    sample: &SegmentationSample,
    rng: &mut R,
    ranges: &AugmentRanges,
) -> Result<SegmentationSample> {
    ranges.validate()?;
    let (h, w) = sample.image.dims2()?;
    let t = draw_transform(rng, ranges, h, w);
    let (image, fg) = raster(sample, &t, h, w);

    let mut points: Vec<(usize, usize)> = sample
        .centerline
        .points()
        .iter()
        .filter_map(|&(r, c)| {
            let (ny, nx) = t.forward.apply(r as f64, c as f64);
            let (ry, rx) = ((ny + 0.5).floor(), (nx + 0.5).floor());
            if ry >= 0.0 && rx >= 0.0 && (ry as usize) < h && (rx as usize) < w {
                Some((ry as usize, rx as usize))
            } else {
                None
            }
        })
        .collect();
    points.sort_unstable_by_key(|&(r, c)| (c, r));
    points.dedup();

    Ok(SegmentationSample {
        image: Tensor::from_vec(&[h, w], image)?,
        mask: complement_stack(&fg, h, w)?,
        centerline: Contour::new(points)?,
    })
}

/// Raster-only augmentation for the training loop, which consumes images and
/// masks but never centerlines. Draws from the stream exactly like
/// [`augment`], and cannot fail on an unlucky transform.
pub fn augment_image_mask<R: Rng>(
    sample: &SegmentationSample,
    rng: &mut R,
    ranges: &AugmentRanges,
) -> Result<(Tensor, Tensor)> {
    ranges.validate()?;
    let (h, w) = sample.image.dims2()?;
    let t = draw_transform(rng, ranges, h, w);
    let (image, fg) = raster(sample, &t, h, w);
    Ok((Tensor::from_vec(&[h, w], image)?, complement_stack(&fg, h, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::synth::phantom::{generate_phantom, PhantomParams};

    fn sample(seed: u64) -> SegmentationSample {
        let params = PhantomParams { height: 64, width: 64, seed, ..PhantomParams::default() };
        generate_phantom(&params).unwrap()
    }

    #[test]
    fn identity_ranges_are_bit_exact() {
        let s = sample(1);
        let mut rng = seeded_rng(5);
        let out = augment(&s, &mut rng, &AugmentRanges::identity()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn forced_flip_twice_restores_the_original() {
        let s = sample(2);
        let flip_only = AugmentRanges { flip_probability: 1.0, ..AugmentRanges::identity() };
        let mut rng = seeded_rng(6);
        let once = augment(&s, &mut rng, &flip_only).unwrap();
        assert_ne!(once, s);
        let twice = augment(&once, &mut rng, &flip_only).unwrap();
        assert_eq!(twice, s);
    }

    fn full_strength() -> AugmentRanges {
        AugmentRanges {
            flip_probability: 0.5,
            max_rotation_deg: 25.0,
            max_shift_px: 40.0,
            zoom_min: 0.5,
            zoom_max: 1.5,
        }
    }

    #[test]
    fn masks_stay_binary_complementary_under_random_transforms() {
        let ranges = full_strength();
        // Full-strength ranges need the full-size image: a 40 px shift on a
        // 64 px frame can push the whole curve out of bounds.
        let s = generate_phantom(&PhantomParams { seed: 3, ..PhantomParams::default() }).unwrap();
        let mut rng = seeded_rng(7);
        for draw in 0..500 {
            let (image, mask) = augment_image_mask(&s, &mut rng, &ranges).unwrap();
            let (h, w) = image.dims2().unwrap();
            let (bg, fg) = mask.data().split_at(h * w);
            for i in 0..h * w {
                assert!(fg[i] == 0.0 || fg[i] == 1.0, "draw {draw}: fg not binary");
                assert_eq!(bg[i] + fg[i], 1.0, "draw {draw}: channels not complementary");
            }
            for &v in image.data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn full_sample_augmentation_tolerates_rare_out_of_frame_curves() {
        let ranges = full_strength();
        let s = generate_phantom(&PhantomParams { seed: 3, ..PhantomParams::default() }).unwrap();
        let mut rng_full = seeded_rng(7);
        let mut rng_raster = seeded_rng(7);
        let mut degenerate = 0;
        for draw in 0..500 {
            let (image, mask) = augment_image_mask(&s, &mut rng_raster, &ranges).unwrap();
            match augment(&s, &mut rng_full, &ranges) {
                Ok(out) => {
                    // Lockstep equality doubles as a stream-stability check:
                    // it keeps holding after error draws only if both paths
                    // consume exactly five uniforms per call.
                    assert_eq!(out.image.data(), image.data(), "draw {draw}: image mismatch");
                    assert_eq!(out.mask.data(), mask.data(), "draw {draw}: mask mismatch");
                    let (h, w) = out.image.dims2().unwrap();
                    for &(r, c) in out.centerline.points() {
                        assert!(r < h && c < w, "draw {draw}: point out of frame");
                    }
                }
                // A maximal zoom-out or zoom-in plus a large shift can
                // legitimately carry every curve point out of frame; the
                // strict sample type reports that rather than fabricating a
                // curve. It must stay a rare corner of the parameter space.
                Err(Error::DegenerateContour { .. }) => degenerate += 1,
                Err(e) => panic!("draw {draw}: unexpected error {e}"),
            }
        }
        assert!(degenerate > 0, "expected at least one out-of-frame draw at full strength");
        assert!(degenerate < 50, "too many out-of-frame draws: {degenerate}/500");
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let s = sample(4);
        let mut rng = seeded_rng(8);
        for ranges in [
            AugmentRanges { flip_probability: 1.5, ..AugmentRanges::identity() },
            AugmentRanges { max_rotation_deg: 30.0, ..AugmentRanges::identity() },
            AugmentRanges { max_shift_px: 50.0, ..AugmentRanges::identity() },
            AugmentRanges { zoom_min: 0.3, zoom_max: 1.0, ..AugmentRanges::identity() },
            AugmentRanges { zoom_min: 1.0, zoom_max: 1.7, ..AugmentRanges::identity() },
            AugmentRanges { zoom_min: 1.2, zoom_max: 0.8, ..AugmentRanges::identity() },
        ] {
            assert!(augment(&s, &mut rng, &ranges).is_err());
        }
    }

    #[test]
    fn pure_shift_moves_the_centerline_exactly() {
        let s = sample(5);
        // Fix the transform by drawing from a degenerate range: max 6 px,
        // but verify via the contract that forward maps points by the drawn
        // shift — easiest to check with shift-only + known uniforms.
        struct FixedRng(Vec<f64>, usize);
        impl rand::RngCore for FixedRng {
            fn next_u32(&mut self) -> u32 {
                self.next_u64() as u32
            }
            fn next_u64(&mut self) -> u64 {
                // Map the queued uniform into the 53-bit mantissa layout the
                // float sampler consumes from the top bits.
                let u = self.0[self.1 % self.0.len()];
                self.1 += 1;
                ((u * (1u64 << 53) as f64) as u64) << 11
            }
            fn fill_bytes(&mut self, dest: &mut [u8]) {
                for chunk in dest.chunks_mut(8) {
                    let v = self.next_u64().to_le_bytes();
                    chunk.copy_from_slice(&v[..chunk.len()]);
                }
            }
        }
        // flip=0.9 (no flip), angle=0.5 (zero), sy=1.0 -> +max, sx=0.5 -> 0,
        // zoom irrelevant (range degenerate at 1).
        let mut rng = FixedRng(vec![0.9, 0.5, 0.999999999, 0.5, 0.5], 0);
        let ranges = AugmentRanges { max_shift_px: 6.0, ..AugmentRanges::identity() };
        let out = augment(&s, &mut rng, &ranges).unwrap();
        // Shift is (2*0.999999999 - 1) * 6 ≈ +6 rows, 0 cols; rounding of
        // point coordinates absorbs the 1e-8 slack.
        for (&(r0, c0), &(r1, c1)) in s.centerline.points().iter().zip(out.centerline.points()) {
            assert_eq!(c1, c0);
            assert_eq!(r1, r0 + 6);
        }
    }
}

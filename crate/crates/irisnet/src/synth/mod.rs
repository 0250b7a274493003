//! Synthetic ultrasound-like tongue phantoms with exact ground truth,
//! online augmentation, and dataset splitting.

pub mod augment;
pub mod phantom;
pub mod split;

pub use augment::{augment, augment_image_mask, AugmentRanges};
pub use phantom::{generate_phantom, PhantomParams, BACKGROUND_LEVEL};
pub use split::split_dataset;

use crate::error::{Error, Result};
use crate::eval::mask::BinaryMask;
use crate::eval::Contour;
use crate::tensor::Tensor;

/// One training/evaluation item: grayscale image, two-channel binary ground
/// truth (channel 0 background, channel 1 foreground), and the generating
/// centerline curve used for distance metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationSample {
    /// `[H, W]`, values in [0, 1].
    pub image: Tensor,
    /// `[2, H, W]`, values in {0, 1}, channels complementary.
    pub mask: Tensor,
    pub centerline: Contour,
}

impl SegmentationSample {
    /// Checks the cross-field invariants: mask binary and complementary,
    /// image in range, centerline inside the foreground.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image.dims2()?;
        let ms = self.mask.shape();
        if ms != [2, h, w] {
            return Err(Error::ShapeMismatch { left: ms.to_vec(), right: vec![2, h, w] });
        }
        if self.image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Msg("image values outside [0,1]".into()));
        }
        let plane = h * w;
        let (bg, fg) = self.mask.data().split_at(plane);
        for (i, (&b, &f)) in bg.iter().zip(fg).enumerate() {
            if (b != 0.0 && b != 1.0) || (f != 0.0 && f != 1.0) || b + f != 1.0 {
                return Err(Error::Msg(format!(
                    "mask channels not binary-complementary at pixel {i}: bg={b}, fg={f}"
                )));
            }
        }
        for &(r, c) in self.centerline.points() {
            if r >= h || c >= w {
                return Err(Error::Msg(format!("centerline point ({r},{c}) outside {h}x{w}")));
            }
            if fg[r * w + c] != 1.0 {
                return Err(Error::Msg(format!(
                    "centerline point ({r},{c}) not on foreground"
                )));
            }
        }
        Ok(())
    }

    /// Foreground channel as a binary mask.
    pub fn fg_mask(&self) -> BinaryMask {
        let (h, w) = self.image.dims2().expect("image is 2-d");
        let fg = &self.mask.data()[h * w..];
        let mut m = BinaryMask::new(h, w);
        for y in 0..h {
            for x in 0..w {
                if fg[y * w + x] == 1.0 {
                    m.set(y, x, true);
                }
            }
        }
        m
    }
}

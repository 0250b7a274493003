//! Everything downstream of a probability map: thresholding, overlap
//! metrics, skeletonization, contour extraction, distance metrics, and the
//! dataset-diversity score.

pub mod contour;
pub mod diversity;
pub mod mask;
pub mod skeleton;

pub use contour::{mask_to_contour, msd, px_to_mm, Contour};
pub use diversity::{dataset_diversity, Diversity};
pub use mask::{binarize, iou, miou, soft_iou, BinaryMask};
pub use skeleton::{component_count, has_2x2_block, largest_component, skeletonize};

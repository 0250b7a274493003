//! Dataset diversity: how far each image sits from the dataset's mean image.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Diversity {
    /// Root-mean-square pixel distance of each image from the mean image.
    pub per_image: Vec<f64>,
    /// Mean of `per_image` — the dataset's diversity score.
    pub mean: f64,
}

/// Computes the pixelwise mean image, then each image's RMS distance from
/// it. Images must be 2-d, same shape, at least two of them.
pub fn dataset_diversity(images: &[Tensor]) -> Result<Diversity> {
    if images.len() < 2 {
        return Err(Error::DatasetTooSmall { got: images.len(), min: 2 });
    }
    let (h, w) = images[0].dims2()?;
    for img in &images[1..] {
        let (ih, iw) = img.dims2()?;
        if (ih, iw) != (h, w) {
            return Err(Error::ShapeMismatch {
                left: images[0].shape().to_vec(),
                right: img.shape().to_vec(),
            });
        }
    }
    let n = images.len() as f64;
    let px = (h * w) as f64;
    let mut mean = vec![0.0; h * w];
    for img in images {
        for (m, &v) in mean.iter_mut().zip(img.data()) {
            *m += v / n;
        }
    }
    let per_image: Vec<f64> = images
        .iter()
        .map(|img| {
            let ss: f64 = img
                .data()
                .iter()
                .zip(&mean)
                .map(|(&v, &m)| (v - m) * (v - m))
                .sum();
            (ss / px).sqrt()
        })
        .collect();
    let score = per_image.iter().sum::<f64>() / n;
    Ok(Diversity { per_image, mean: score })
}

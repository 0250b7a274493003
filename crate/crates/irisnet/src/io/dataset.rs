//! On-disk dataset layout.
//!
//! One sample is three files named from its id: `<id>.pgm` (image),
//! `<id>_mask.pgm` (foreground channel; background is its complement), and
//! `<id>.json` (centerline points plus the exact generating parameters).
//! `manifest.json` binds ids to files and to a train/validation/test split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Contour;
use crate::io::pgm;
use crate::synth::{PhantomParams, SegmentationSample};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Ground truth that does not fit in a raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub centerline: Vec<(usize, usize)>,
    pub params: PhantomParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub sidecar: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// (train, validation, test) entry counts.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.of_split(s).count();
        (count(Split::Train), count(Split::Validation), count(Split::Test))
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_NAME);
    let mut json = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(&path, e))?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Standard file names for a sample id: (image, mask, sidecar).
pub fn sample_files(id: &str) -> (String, String, String) {
    (format!("{id}.pgm"), format!("{id}_mask.pgm"), format!("{id}.json"))
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let mut json = serde_json::to_string_pretty(sidecar).map_err(|e| Error::json(path, e))?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Writes the three files of one sample and returns a manifest entry for
/// them. The image plane is quantized to 8 bits; masks and the centerline
/// round-trip exactly.
pub fn save_sample(
    dir: &Path,
    id: &str,
    split: Split,
    sample: &SegmentationSample,
    params: &PhantomParams,
) -> Result<ManifestEntry> {
    let (image, mask, sidecar) = sample_files(id);
    pgm::write_image_pgm(&dir.join(&image), &sample.image)?;
    pgm::write_mask_pgm(&dir.join(&mask), &sample.fg_mask())?;
    write_sidecar(
        &dir.join(&sidecar),
        &Sidecar { centerline: sample.centerline.points().to_vec(), params: params.clone() },
    )?;
    Ok(ManifestEntry { id: id.to_string(), image, mask, sidecar, split })
}

pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<SegmentationSample> {
    let image = pgm::read_image_pgm(&dir.join(&entry.image))?;
    let fg = pgm::read_mask_pgm(&dir.join(&entry.mask))?;
    let (h, w) = fg.dims();
    if image.shape() != [h, w] {
        return Err(Error::Manifest {
            path: dir.join(MANIFEST_NAME),
            detail: format!(
                "sample {}: image is {:?} but mask is {h}x{w}",
                entry.id,
                image.shape()
            ),
        });
    }
    let mut mask = vec![0.0; 2 * h * w];
    for i in 0..h * w {
        let v = fg.get(i / w, i % w) as u8 as f64;
        mask[i] = 1.0 - v;
        mask[h * w + i] = v;
    }
    let sidecar = read_sidecar(&dir.join(&entry.sidecar))?;
    let sample = SegmentationSample {
        image,
        mask: Tensor::from_vec(&[2, h, w], mask)?,
        centerline: Contour::new(sidecar.centerline)?,
    };
    // Full cross-file consistency check (centerline inside the mask, value
    // ranges); catches files edited or paired up wrongly.
    sample.validate()?;
    Ok(sample)
}

/// Loads every sample of one split, in manifest order.
pub fn load_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<SegmentationSample>> {
    manifest.of_split(split).map(|e| load_sample(dir, e)).collect()
}

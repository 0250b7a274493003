//! File formats: PGM rasters, JSON sidecars and manifests, CSV reports.

pub mod csv;
pub mod dataset;
pub mod pgm;

pub use csv::{read_contour_csv, write_contour_csv, write_history_csv, write_metrics_csv, MetricsRow};
pub use dataset::{
    load_sample, load_split, read_manifest, read_sidecar, sample_files, save_sample,
    write_manifest, write_sidecar, Manifest, ManifestEntry, Sidecar, Split, MANIFEST_NAME,
};
pub use pgm::{
    gray_from_unit, read_image_pgm, read_mask_pgm, read_pgm, write_image_pgm, write_mask_pgm,
    write_pgm,
};

//! Ultrasound tongue-contour segmentation with fused-dilation convolutions.
//!
//! The crate implements, from the numerics up: a dense f64 tensor type, 2-d
//! conv/pool/norm ops with hand-derived gradients on a Wengert tape, the
//! RetinaConv fused standard+dilated convolution module, the IrisNet
//! encoder-decoder built from it, Dice/BCE training with Adam, thresholded
//! and skeleton-based contour evaluation (mean sum of distances), and a
//! synthetic ultrasound phantom generator that exercises the whole pipeline
//! deterministically from a single seed.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod ops;
pub mod retina;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

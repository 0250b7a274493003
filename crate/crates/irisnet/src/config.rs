//! Run configuration: one JSON file drives every command.
//!
//! Missing fields take the documented defaults; unknown fields are rejected.
//! Emission always writes every field, so a saved config reparses to the
//! identical value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::synth::split::check_ratios;
use crate::synth::{AugmentRanges, PhantomParams};
use crate::train::AdamHyper;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    /// Sum of Dice and BCE with equal weights.
    #[serde(rename = "dice+bce")]
    DiceBce,
    #[serde(rename = "dice")]
    Dice,
    #[serde(rename = "bce")]
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub loss_mode: LossMode,
    pub augment: AugmentRanges,
    pub split_ratios: (f64, f64, f64),
    /// Foreground threshold applied to probability maps.
    pub threshold: f64,
    pub mm_per_px: f64,
    pub seed: u64,
    /// Generator settings used by dataset creation and by evaluation oracles.
    pub phantom: PhantomParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchConfig::default(),
            epochs: 50,
            batch_size: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps_adam: 1e-8,
            loss_mode: LossMode::DiceBce,
            augment: AugmentRanges::default(),
            split_ratios: (0.8, 0.1, 0.1),
            threshold: 0.1,
            mm_per_px: 0.15,
            seed: 0,
            phantom: PhantomParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.augment.validate()?;
        self.phantom.validate()?;
        check_ratios(self.split_ratios)?;

        let bad = |field: &'static str, detail: String| Err(Error::BadConfig { field, detail });
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        // Zero is allowed: a frozen run is a legitimate diagnostic.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate", format!("{} not a finite non-negative value", self.learning_rate));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !b.is_finite() || !(0.0..1.0).contains(&b) {
                return bad(field, format!("{b} outside [0, 1)"));
            }
        }
        if !self.eps_adam.is_finite() || self.eps_adam <= 0.0 {
            return bad("eps_adam", format!("{} must be a positive value", self.eps_adam));
        }
        if !self.threshold.is_finite() || self.threshold <= 0.0 || self.threshold >= 1.0 {
            return Err(Error::BadThreshold { got: self.threshold });
        }
        if !self.mm_per_px.is_finite() || self.mm_per_px <= 0.0 {
            return bad("mm_per_px", format!("{} must be positive", self.mm_per_px));
        }
        // The generator and the model must agree on frame size, or training
        // on freshly generated data is guaranteed to fail later.
        if (self.phantom.height, self.phantom.width)
            != (self.arch.input_size, self.arch.input_size)
        {
            return bad(
                "phantom",
                format!(
                    "{}x{} does not match arch.input_size {}",
                    self.phantom.height, self.phantom.width, self.arch.input_size
                ),
            );
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.eps_adam,
        }
    }
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    config.validate()?;
    Ok(config)
}

/// Writes the fully resolved config, every field explicit.
pub fn save_config(path: &Path, config: &TrainConfig) -> Result<()> {
    let mut json = serde_json::to_string_pretty(config).map_err(|e| Error::json(path, e))?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

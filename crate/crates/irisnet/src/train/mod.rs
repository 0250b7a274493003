//! Training: losses, the Adam optimizer, and the epoch loop.

pub mod adam;
pub mod history;
pub mod loss;
pub mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use history::{EpochRecord, TrainHistory};
pub use trainer::{train, TrainOutcome};
pub use loss::{bce_loss, dice_loss, BCE_CLAMP, DICE_SMOOTH};

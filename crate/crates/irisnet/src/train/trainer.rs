//! The epoch loop: seeded shuffling, online augmentation, minibatch
//! gradient steps, validation scoring, and best-checkpoint saving.
//!
//! Everything stochastic is keyed off the master seed: the epoch-e shuffle
//! uses stream (SHUFFLE, e) and the augmentation of sample i in epoch e uses
//! stream (AUGMENT, e<<32 | i), so results do not depend on batch layout or
//! on anything that ran earlier.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::checkpoint::save_checkpoint;
use crate::config::{LossMode, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ops::tape::{Tape, ValueId};
use crate::rng::{derive_seed, seeded_rng, stream};
use crate::synth::{augment_image_mask, SegmentationSample};
use crate::tensor::Tensor;
use crate::train::adam::{adam_step, AdamState};
use crate::train::history::{EpochRecord, TrainHistory};
use crate::train::loss::{bce_loss, dice_loss, BCE_CLAMP, DICE_SMOOTH};

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// 1-based epoch whose checkpoint is on disk.
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub checkpoint: PathBuf,
}

/// Stacks per-sample (image [H,W], mask [2,H,W]) pairs into
/// (input [B,1,H,W], target [B,2,H,W]).
fn stack_batch(items: &[(Tensor, Tensor)]) -> Result<(Tensor, Tensor)> {
    let b = items.len();
    let (h, w) = items[0].0.dims2()?;
    let plane = h * w;
    let mut input = Vec::with_capacity(b * plane);
    let mut target = Vec::with_capacity(b * 2 * plane);
    for (image, mask) in items {
        if image.shape() != [h, w] || mask.shape() != [2, h, w] {
            return Err(Error::ShapeMismatch {
                left: image.shape().to_vec(),
                right: vec![h, w],
            });
        }
        input.extend_from_slice(image.data());
        target.extend_from_slice(mask.data());
    }
    Ok((Tensor::from_vec(&[b, 1, h, w], input)?, Tensor::from_vec(&[b, 2, h, w], target)?))
}

/// Validation score over a whole set: Dice on pooled foreground sums (one
/// smoothing term for the set, identical to scoring it as a single batch)
/// and BCE as the mean over every pixel and channel.
fn validation_scores(
    model: &Model,
    samples: &[SegmentationSample],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut tsum = 0.0;
    let mut bce_sum = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size) {
        let items: Vec<(Tensor, Tensor)> =
            chunk.iter().map(|s| (s.image.clone(), s.mask.clone())).collect();
        let (input, target) = stack_batch(&items)?;
        let output = model.forward_eval(&input)?;
        let (b, c, h, w) = output.dims4()?;
        let plane = h * w;
        for bi in 0..b {
            let s = (bi * c + 1) * plane;
            for i in s..s + plane {
                let (p, t) = (output.data()[i], target.data()[i]);
                inter += p * t;
                psum += p;
                tsum += t;
            }
        }
        for (&p, &t) in output.data().iter().zip(target.data()) {
            bce_sum -= t * (p + BCE_CLAMP).ln() + (1.0 - t) * (1.0 - p + BCE_CLAMP).ln();
        }
        count += output.len();
    }
    let dice = 1.0 - (2.0 * inter + DICE_SMOOTH) / (psum + tsum + DICE_SMOOTH);
    Ok((dice, bce_sum / count as f64))
}

/// Runs the full loop, mutating `model` in place (its final state is the
/// last epoch, not the best one). A checkpoint is written to
/// `checkpoint_path` whenever the validation Dice loss strictly improves, so
/// the file always holds the best epoch. Epoch and batch coordinates in
/// errors are 1-based.
pub fn train(
    model: &mut Model,
    train_set: &[SegmentationSample],
    val_set: &[SegmentationSample],
    config: &TrainConfig,
    checkpoint_path: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::DatasetTooSmall { got: train_set.len().min(val_set.len()), min: 1 });
    }

    let mut state = AdamState::new(&model.param_tensors(), config.adam())?;
    let mut history = TrainHistory::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;

    for epoch in 1..=config.epochs {
        let started = Instant::now();

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = seeded_rng(derive_seed(config.seed, stream::SHUFFLE, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut dice_acc = 0.0;
        let mut bce_acc = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = batch_idx + 1;
            let items = chunk
                .iter()
                .map(|&si| {
                    let key = ((epoch as u64) << 32) | si as u64;
                    let mut rng = seeded_rng(derive_seed(config.seed, stream::AUGMENT, key));
                    augment_image_mask(&train_set[si], &mut rng, &config.augment)
                })
                .collect::<Result<Vec<_>>>()?;
            let (input, target) = stack_batch(&items)?;

            // Tensors reject non-finite values at construction, so a NaN
            // born anywhere in the step surfaces as Error::NonFinite from
            // the op that produced it; stamp it with its coordinates.
            let locate = |e: Error| match e {
                Error::NonFinite { context } => {
                    Error::NonFiniteAt { context: context.to_string(), epoch, batch }
                }
                other => other,
            };

            let mut tape = Tape::new();
            let recorded = model.forward_train_recorded(&mut tape, &input).map_err(locate)?;
            let loss_id = (|| -> Result<ValueId> {
                Ok(match config.loss_mode {
                    LossMode::DiceBce => {
                        let d = tape.dice_loss(recorded.output, &target, DICE_SMOOTH)?;
                        let b = tape.bce_loss(recorded.output, &target, BCE_CLAMP)?;
                        tape.add_scalars(d, b)?
                    }
                    LossMode::Dice => tape.dice_loss(recorded.output, &target, DICE_SMOOTH)?,
                    LossMode::Bce => tape.bce_loss(recorded.output, &target, BCE_CLAMP)?,
                })
            })()
            .map_err(locate)?;
            let loss_value = tape.value(loss_id).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { value: loss_value, epoch, batch });
            }

            // Both losses go to the history regardless of what is optimized.
            let output = tape.value(recorded.output);
            let weight = chunk.len() as f64;
            dice_acc += dice_loss(output, &target, DICE_SMOOTH)? * weight;
            bce_acc += bce_loss(output, &target, BCE_CLAMP)? * weight;

            let seed = Tensor::from_vec(&[1], vec![1.0])?;
            let mut grads = tape.backward(loss_id, &seed).map_err(locate)?;
            let grad_tensors: Vec<Tensor> =
                recorded.params.iter().map(|&id| grads.take(id)).collect();
            let mut params = model.param_tensors_mut();
            adam_step(&mut params, &grad_tensors, &mut state).map_err(locate)?;
        }

        let n = train_set.len() as f64;
        let (val_dice, val_bce) = validation_scores(model, val_set, config.batch_size)?;
        let saved = val_dice < best_val;
        if saved {
            best_val = val_dice;
            best_epoch = epoch;
            save_checkpoint(model, checkpoint_path)?;
        }
        history.push(EpochRecord {
            epoch,
            train_dice: dice_acc / n,
            train_bce: bce_acc / n,
            val_dice,
            val_bce,
            seconds: started.elapsed().as_secs_f64(),
            saved,
        });
    }

    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_dice: best_val,
        checkpoint: checkpoint_path.to_path_buf(),
    })
}

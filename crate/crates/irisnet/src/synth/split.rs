//! Deterministic train/validation/test splitting.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng, stream};

/// Minimum dataset size: every partition must be able to hold at least one
/// sample under the 80/10/10 default.
pub const MIN_SPLIT_SIZE: usize = 10;

/// All three ratios positive and finite, summing to 1 within 1e-9.
pub fn check_ratios(ratios: (f64, f64, f64)) -> Result<()> {
    let (rt, rv, rs) = ratios;
    let finite = rt.is_finite() && rv.is_finite() && rs.is_finite();
    if !finite || rt <= 0.0 || rv <= 0.0 || rs <= 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(Error::BadSplit { ratios });
    }
    Ok(())
}

/// Shuffles with a seed derived from `seed`, then cuts contiguously. Sizes
/// are floor allocations of the validation and test ratios; the remainder
/// goes to train. Partitions are disjoint and exhaustive by construction.
pub fn split_dataset<T>(
    samples: Vec<T>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    check_ratios(ratios)?;
    let (_, rv, rs) = ratios;
    let n = samples.len();
    if n < MIN_SPLIT_SIZE {
        return Err(Error::DatasetTooSmall { got: n, min: MIN_SPLIT_SIZE });
    }
    let n_val = (n as f64 * rv).floor() as usize;
    let n_test = (n as f64 * rs).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(derive_seed(seed, stream::SPLIT, 0));
    order.shuffle(&mut rng);

    let mut slots: Vec<Option<T>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<T> {
        idx.iter().map(|&i| slots[i].take().expect("index used twice")).collect()
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok((train, val, test))
}

//! Segmentation losses: soft Dice and binary cross-entropy.
//!
//! Both take the softmax probability map and the one-hot target, shaped
//! `[B, C, H, W]` with channel 1 as foreground. Dice is computed on the
//! foreground channel only; BCE averages over every pixel and channel.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keeps the Dice ratio defined when prediction and target are both empty.
pub const DICE_SMOOTH: f64 = 1e-6;
/// Keeps the BCE logs finite at p = 0 and p = 1.
pub const BCE_CLAMP: f64 = 1e-7;

fn check_pair(pred: &Tensor, target: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let dims = pred.dims4()?;
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    if dims.1 < 2 {
        return Err(Error::Rank { expected: 2, shape: pred.shape().to_vec() });
    }
    Ok(dims)
}

/// Foreground slices of both tensors as (pred, target) flat vectors.
fn foreground<'a>(pred: &'a Tensor, target: &'a Tensor) -> Result<(Vec<&'a [f64]>, Vec<&'a [f64]>)> {
    let (b, c, h, w) = check_pair(pred, target)?;
    let plane = h * w;
    let mut ps = Vec::with_capacity(b);
    let mut ts = Vec::with_capacity(b);
    for bi in 0..b {
        let s = (bi * c + 1) * plane;
        ps.push(&pred.data()[s..s + plane]);
        ts.push(&target.data()[s..s + plane]);
    }
    Ok((ps, ts))
}

/// 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s) over the foreground channel.
/// `smooth` keeps the ratio defined when both maps are empty.
pub fn dice_loss(pred: &Tensor, target: &Tensor, smooth: f64) -> Result<f64> {
    let (ps, ts) = foreground(pred, target)?;
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut tsum = 0.0;
    for (p, t) in ps.iter().zip(&ts) {
        for (a, b) in p.iter().zip(*t) {
            inter += a * b;
            psum += a;
            tsum += b;
        }
    }
    let coeff = (2.0 * inter + smooth) / (psum + tsum + smooth);
    Ok(1.0 - coeff)
}

/// d(dice_loss)/d(pred), scaled by `upstream`. Only the foreground channel
/// receives gradient.
pub fn dice_loss_backward(
    pred: &Tensor,
    target: &Tensor,
    smooth: f64,
    upstream: f64,
) -> Result<Tensor> {
    let (b, c, h, w) = check_pair(pred, target)?;
    let plane = h * w;
    let mut inter = 0.0;
    let mut psum = 0.0;
    let mut tsum = 0.0;
    for bi in 0..b {
        let s = (bi * c + 1) * plane;
        for i in s..s + plane {
            inter += pred.data()[i] * target.data()[i];
            psum += pred.data()[i];
            tsum += target.data()[i];
        }
    }
    let num = 2.0 * inter + smooth;
    let den = psum + tsum + smooth;
    let mut grad = Tensor::zeros(pred.shape())?;
    let gd = grad.data_mut();
    for bi in 0..b {
        let s = (bi * c + 1) * plane;
        for i in s..s + plane {
            let t = target.data()[i];
            // d coeff / dp = (2t*den - num) / den^2; loss = 1 - coeff.
            gd[i] = -upstream * (2.0 * t * den - num) / (den * den);
        }
    }
    Ok(grad)
}

/// Mean over pixels and channels of -[t*ln(p+c) + (1-t)*ln(1-p+c)].
/// `clamp` keeps the logs finite at p = 0 and p = 1.
pub fn bce_loss(pred: &Tensor, target: &Tensor, clamp: f64) -> Result<f64> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let mut acc = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        acc -= t * (p + clamp).ln() + (1.0 - t) * (1.0 - p + clamp).ln();
    }
    Ok(acc / n)
}

pub fn bce_loss_backward(
    pred: &Tensor,
    target: &Tensor,
    clamp: f64,
    upstream: f64,
) -> Result<Tensor> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let scale = upstream / n;
    Tensor::from_vec(
        pred.shape(),
        pred.data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| -scale * (t / (p + clamp) - (1.0 - t) / (1.0 - p + clamp)))
            .collect(),
    )
}

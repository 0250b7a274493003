//! Per-channel batch normalization.
//!
//! Training mode normalizes with the current batch's statistics (biased
//! variance, divide by N) and folds them into running statistics with
//! momentum `running = (1 - m) * running + m * batch`. Eval mode uses the
//! running statistics and is an error before any training step has
//! populated them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Running statistics; the learnable scale/shift live with the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning {
    pub mean: Tensor,
    pub var: Tensor,
    pub initialized: bool,
}

impl BnRunning {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BnRunning {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::filled(&[channels], 1.0)?,
            initialized: false,
        })
    }
}

/// Saved normalization intermediates for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

fn check_affine(c: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            left: gamma.shape().to_vec(),
            right: vec![c],
        });
    }
    Ok(())
}

pub fn batchnorm_train(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut BnRunning,
    eps: f64,
    momentum: f64,
) -> Result<(Tensor, BnCache)> {
    let (b, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    let n = b * h * w;
    let plane = h * w;
    let data = input.data();

    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut acc = 0.0;
        for bi in 0..b {
            let s = (bi * c + ch) * plane;
            acc += data[s..s + plane].iter().sum::<f64>();
        }
        let mu = acc / n as f64;
        let mut acc2 = 0.0;
        for bi in 0..b {
            let s = (bi * c + ch) * plane;
            acc2 += data[s..s + plane].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = acc2 / n as f64;
    }

    let mut x_hat = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let istd = 1.0 / (var[ch] + eps).sqrt();
        inv_std[ch] = istd;
        let (g, be) = (gamma.data()[ch], beta.data()[ch]);
        for bi in 0..b {
            let s = (bi * c + ch) * plane;
            for i in s..s + plane {
                let xh = (data[i] - mean[ch]) * istd;
                x_hat[i] = xh;
                out[i] = g * xh + be;
            }
        }
    }

    for ch in 0..c {
        let rm = running.mean.data_mut();
        rm[ch] = (1.0 - momentum) * rm[ch] + momentum * mean[ch];
        let rv = running.var.data_mut();
        rv[ch] = (1.0 - momentum) * rv[ch] + momentum * var[ch];
    }
    running.initialized = true;

    Ok((
        Tensor::from_vec(input.shape(), out)?,
        BnCache { x_hat: Tensor::from_vec(input.shape(), x_hat)?, inv_std },
    ))
}

pub fn batchnorm_eval(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &BnRunning,
    eps: f64,
) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    check_affine(c, gamma, beta)?;
    if !running.initialized {
        return Err(Error::BatchNormUninitialized);
    }
    let plane = h * w;
    let data = input.data();
    let mut out = vec![0.0; data.len()];
    for ch in 0..c {
        let istd = 1.0 / (running.var.data()[ch] + eps).sqrt();
        let mu = running.mean.data()[ch];
        let (g, be) = (gamma.data()[ch], beta.data()[ch]);
        for bi in 0..b {
            let s = (bi * c + ch) * plane;
            for i in s..s + plane {
                out[i] = g * (data[i] - mu) * istd + be;
            }
        }
    }
    Tensor::from_vec(input.shape(), out)
}

/// Gradients w.r.t. input, gamma, beta. Uses the compact form for biased
/// batch variance: dx = inv_std * (dxh - mean(dxh) - x_hat * mean(dxh*x_hat))
/// with per-channel means over the B*H*W normalization set.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BnCache,
    gamma: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, c, h, w) = grad_out.dims4()?;
    if cache.x_hat.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            left: cache.x_hat.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let n = (b * h * w) as f64;
    let plane = h * w;
    let dy = grad_out.data();
    let xh = cache.x_hat.data();

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut dx = vec![0.0; dy.len()];
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dyxh = 0.0;
        for bi in 0..b {
            let s = (bi * c + ch) * plane;
            for i in s..s + plane {
                sum_dy += dy[i];
                sum_dyxh += dy[i] * xh[i];
            }
        }
        dgamma[ch] = sum_dyxh;
        dbeta[ch] = sum_dy;
        let g = gamma.data()[ch];
        let istd = cache.inv_std[ch];
        let mean_dy = sum_dy / n;
        let mean_dyxh = sum_dyxh / n;
        for bi in 0..b {
            let s = (bi * c + ch) * plane;
            for i in s..s + plane {
                dx[i] = g * istd * (dy[i] - mean_dy - xh[i] * mean_dyxh);
            }
        }
    }
    Ok((
        Tensor::from_vec(grad_out.shape(), dx)?,
        Tensor::from_vec(&[c], dgamma)?,
        Tensor::from_vec(&[c], dbeta)?,
    ))
}

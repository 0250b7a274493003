//! Pointwise and per-pixel activations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// max(x, 0). The subgradient at exactly 0 is taken as 0.
pub fn relu(input: &Tensor) -> Result<Tensor> {
    Tensor::from_vec(
        input.shape(),
        input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    )
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            left: input.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    Tensor::from_vec(
        input.shape(),
        input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    )
}

/// Softmax over the channel axis, independently per (batch, y, x).
/// The per-pixel channel maximum is subtracted before exponentiation, so
/// arbitrary finite logits stay in range.
pub fn softmax_channels(input: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    let plane = h * w;
    let data = input.data();
    let mut out = vec![0.0; data.len()];
    for bi in 0..b {
        let base = bi * c * plane;
        for p in 0..plane {
            let mut max = f64::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(data[base + ch * plane + p]);
            }
            let mut denom = 0.0;
            for ch in 0..c {
                let e = (data[base + ch * plane + p] - max).exp();
                out[base + ch * plane + p] = e;
                denom += e;
            }
            for ch in 0..c {
                out[base + ch * plane + p] /= denom;
            }
        }
    }
    Tensor::from_vec(input.shape(), out)
}

/// dL/dx_c = y_c * (dL/dy_c - sum_k dL/dy_k * y_k), per pixel.
pub fn softmax_channels_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            left: output.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let (b, c, h, w) = output.dims4()?;
    let plane = h * w;
    let y = output.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0; y.len()];
    for bi in 0..b {
        let base = bi * c * plane;
        for p in 0..plane {
            let mut inner = 0.0;
            for ch in 0..c {
                let i = base + ch * plane + p;
                inner += dy[i] * y[i];
            }
            for ch in 0..c {
                let i = base + ch * plane + p;
                dx[i] = y[i] * (dy[i] - inner);
            }
        }
    }
    Tensor::from_vec(output.shape(), dx)
}

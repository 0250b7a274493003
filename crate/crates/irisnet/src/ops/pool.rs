//! 2x2 max pooling with recorded argmax.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub struct PoolOut {
    pub output: Tensor,
    /// Flat input index of the chosen maximum, one per output element.
    /// Ties resolve to the first maximum in row-major window order.
    pub argmax: Vec<usize>,
}

pub fn maxpool2d(input: &Tensor) -> Result<PoolOut> {
    let (b, c, h, w) = input.dims4()?;
    if h % 2 != 0 {
        return Err(Error::NotDivisible { extent: h, divisor: 2, context: "maxpool2d height" });
    }
    if w % 2 != 0 {
        return Err(Error::NotDivisible { extent: w, divisor: 2, context: "maxpool2d width" });
    }
    let (ho, wo) = (h / 2, w / 2);
    let data = input.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    for bc in 0..b * c {
        let base = bc * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let i00 = base + (2 * y) * w + 2 * x;
                let window = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = window[0];
                for &i in &window[1..] {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok(PoolOut { output: Tensor::from_vec(&[b, c, ho, wo], out)?, argmax })
}

/// Routes the upstream gradient to the recorded argmax positions.
pub fn maxpool2d_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::DataLength { expected: argmax.len(), got: grad_out.len() });
    }
    let mut dx = Tensor::zeros(input_shape)?;
    let slot = dx.data_mut();
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        slot[src] += g;
    }
    Ok(dx)
}

//! RetinaConv: a standard kernel and a dilated kernel fused into one pass.
//!
//! A layer owns a dense `ks x ks` kernel `g`, a `kd x kd` kernel `h` applied
//! at dilation `d`, and one shared bias per output channel. Because
//! convolution distributes over kernel addition, `conv(x, g) + conv(x, h@d)`
//! equals a single convolution with a composed kernel that embeds `g` at the
//! center and the taps of `h` spread `d` apart. The fused path materializes
//! that composed kernel and convolves once; [`retina_conv_reference`] keeps
//! the two-pass form alive as the equivalence oracle and the benchmark
//! baseline.

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d, conv2d_backward, ConvSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RetinaConvLayer {
    /// Dense kernel, `[co, ci, ks, ks]`, ks odd.
    pub standard: Tensor,
    /// Dilated kernel, `[co, ci, kd, kd]`, kd odd, taps `dilation` apart.
    pub dilated: Tensor,
    pub dilation: usize,
    /// One bias per output channel, shared by both kernels.
    pub bias: Tensor,
}

impl RetinaConvLayer {
    pub fn new(standard: Tensor, dilated: Tensor, dilation: usize, bias: Tensor) -> Result<Self> {
        let (co, ci, ks, ksw) = standard.dims4()?;
        let (co2, ci2, kd, kdw) = dilated.dims4()?;
        if ks != ksw {
            return Err(Error::KernelMismatch {
                kernel: standard.shape().to_vec(),
                input: vec![],
                why: "standard kernel is not square",
            });
        }
        if kd != kdw {
            return Err(Error::KernelMismatch {
                kernel: dilated.shape().to_vec(),
                input: vec![],
                why: "dilated kernel is not square",
            });
        }
        if ks % 2 == 0 {
            return Err(Error::EvenKernel { what: "standard kernel size", got: ks });
        }
        if kd % 2 == 0 {
            return Err(Error::EvenKernel { what: "dilated kernel size", got: kd });
        }
        if co != co2 || ci != ci2 {
            return Err(Error::ShapeMismatch {
                left: standard.shape().to_vec(),
                right: dilated.shape().to_vec(),
            });
        }
        if dilation == 0 {
            return Err(Error::ZeroParam { what: "dilation", got: 0 });
        }
        if bias.shape() != [co] {
            return Err(Error::ShapeMismatch { left: bias.shape().to_vec(), right: vec![co] });
        }
        Ok(RetinaConvLayer { standard, dilated, dilation, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.standard.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.standard.shape()[1]
    }

    /// Side length of the composed kernel: the two footprints overlaid.
    pub fn effective_receptive_field(&self) -> usize {
        let ks = self.standard.shape()[2];
        let kd = self.dilated.shape()[2];
        ks.max((kd - 1) * self.dilation + 1)
    }

    /// Learnable scalar count: both kernels plus the shared bias.
    pub fn count_params(&self) -> usize {
        self.standard.len() + self.dilated.len() + self.bias.len()
    }
}

/// Placement of the two kernels inside the composed extent.
struct Placement {
    k: usize,
    off_g: usize,
    off_h: usize,
}

fn placement(layer: &RetinaConvLayer) -> Placement {
    let ks = layer.standard.shape()[2];
    let kd = layer.dilated.shape()[2];
    let k = layer.effective_receptive_field();
    let center = k / 2;
    Placement {
        k,
        off_g: center - ks / 2,
        off_h: center - (kd / 2) * layer.dilation,
    }
}

/// The single dense kernel equivalent to applying both kernels and summing.
/// Taps of `g` and `h` that land on the same position add up.
pub fn compose_kernels(layer: &RetinaConvLayer) -> Result<Tensor> {
    let (co, ci, ks, _) = layer.standard.dims4()?;
    let kd = layer.dilated.shape()[2];
    let p = placement(layer);
    let mut out = Tensor::zeros(&[co, ci, p.k, p.k])?;
    let data = out.data_mut();
    let kk = p.k * p.k;
    let g = layer.standard.data();
    let h = layer.dilated.data();
    for oc in 0..co * ci {
        let dst = oc * kk;
        for i in 0..ks {
            for j in 0..ks {
                data[dst + (p.off_g + i) * p.k + p.off_g + j] += g[(oc * ks + i) * ks + j];
            }
        }
        for i in 0..kd {
            for j in 0..kd {
                data[dst + (p.off_h + i * layer.dilation) * p.k
                    + p.off_h
                    + j * layer.dilation] += h[(oc * kd + i) * kd + j];
            }
        }
    }
    Ok(out)
}

/// Fused forward: one "same" stride-1 convolution with the composed kernel.
pub fn retina_conv_forward(input: &Tensor, layer: &RetinaConvLayer) -> Result<Tensor> {
    let composed = compose_kernels(layer)?;
    conv2d(input, &composed, Some(&layer.bias), ConvSpec::same(1))
}

/// Two-pass form: standard conv plus dilated conv plus bias. Kept as the
/// permanent equivalence oracle and throughput baseline; never removed.
pub fn retina_conv_reference(input: &Tensor, layer: &RetinaConvLayer) -> Result<Tensor> {
    let a = conv2d(input, &layer.standard, Some(&layer.bias), ConvSpec::same(1))?;
    let b = conv2d(input, &layer.dilated, None, ConvSpec::same(layer.dilation))?;
    a.elementwise_add(&b)
}

pub struct RetinaConvGrads {
    pub input: Tensor,
    pub standard: Tensor,
    pub dilated: Tensor,
    pub bias: Tensor,
}

/// Backward through the fused path: differentiate the composed-kernel
/// convolution, then route each composed-tap gradient to the kernel taps
/// that created it. Positions where `g` and `h` overlap send the same
/// gradient entry to both kernels.
pub fn retina_conv_backward(
    input: &Tensor,
    layer: &RetinaConvLayer,
    grad_out: &Tensor,
) -> Result<RetinaConvGrads> {
    let composed = compose_kernels(layer)?;
    let grads = conv2d_backward(input, &composed, ConvSpec::same(1), grad_out)?;
    let (dg, dh) = scatter_composed_grad(layer, &grads.kernel)?;
    Ok(RetinaConvGrads { input: grads.input, standard: dg, dilated: dh, bias: grads.bias })
}

/// Splits a composed-kernel gradient back into the two kernels' gradients.
pub fn scatter_composed_grad(layer: &RetinaConvLayer, dk: &Tensor) -> Result<(Tensor, Tensor)> {
    let (co, ci, ks, _) = layer.standard.dims4()?;
    let kd = layer.dilated.shape()[2];
    let p = placement(layer);
    if dk.shape() != [co, ci, p.k, p.k] {
        return Err(Error::ShapeMismatch {
            left: dk.shape().to_vec(),
            right: vec![co, ci, p.k, p.k],
        });
    }
    let kk = p.k * p.k;
    let dkd = dk.data();
    let mut dg = vec![0.0; layer.standard.len()];
    let mut dh = vec![0.0; layer.dilated.len()];
    for oc in 0..co * ci {
        let src = oc * kk;
        for i in 0..ks {
            for j in 0..ks {
                dg[(oc * ks + i) * ks + j] = dkd[src + (p.off_g + i) * p.k + p.off_g + j];
            }
        }
        for i in 0..kd {
            for j in 0..kd {
                dh[(oc * kd + i) * kd + j] =
                    dkd[src + (p.off_h + i * layer.dilation) * p.k + p.off_h + j * layer.dilation];
            }
        }
    }
    Ok((
        Tensor::from_vec(layer.standard.shape(), dg)?,
        Tensor::from_vec(layer.dilated.shape(), dh)?,
    ))
}

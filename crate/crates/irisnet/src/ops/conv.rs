//! 2-d convolution (cross-correlation) and its transpose.
//!
//! Two first-class forward implementations exist: [`conv2d_direct`] is a
//! plain loop kept readable and serves as the oracle; [`conv2d`] lowers the
//! input to a patch matrix and multiplies (im2col + gemm), which is what the
//! training loop actually runs. Their outputs must agree to 1e-12 relative
//! and the test suite holds them to that.
//!
//! Out-of-bounds taps read zero. A tap lands at `y*stride + i*dilation - pad`
//! for kernel row `i`, so the effective kernel extent is
//! `(k-1)*dilation + 1`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so stride-1 output extent equals input extent.
    /// Requires an odd kernel.
    Same,
    Explicit(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvSpec {
    /// Stride-1 "same" convolution with the given dilation.
    pub fn same(dilation: usize) -> Self {
        ConvSpec { stride: 1, dilation, padding: Padding::Same }
    }

    pub fn explicit(stride: usize, dilation: usize, pad: usize) -> Self {
        ConvSpec { stride, dilation, padding: Padding::Explicit(pad) }
    }
}

/// Resolved sizes shared by every conv kernel routine.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn geometry(input: &Tensor, kernel: &Tensor, spec: ConvSpec) -> Result<ConvGeom> {
    let (b, ci, h, w) = input.dims4()?;
    let (co, ck, k, kw) = kernel.dims4()?;
    if k != kw {
        return Err(Error::KernelMismatch {
            kernel: kernel.shape().to_vec(),
            input: input.shape().to_vec(),
            why: "kernel is not square",
        });
    }
    if ck != ci {
        return Err(Error::KernelMismatch {
            kernel: kernel.shape().to_vec(),
            input: input.shape().to_vec(),
            why: "kernel input channels differ from input channels",
        });
    }
    if spec.stride == 0 {
        return Err(Error::ZeroParam { what: "stride", got: 0 });
    }
    if spec.dilation == 0 {
        return Err(Error::ZeroParam { what: "dilation", got: 0 });
    }
    let eff = (k - 1) * spec.dilation + 1;
    let pad = match spec.padding {
        Padding::Same => {
            if k % 2 == 0 {
                return Err(Error::EvenKernel { what: "kernel_size with \"same\" padding", got: k });
            }
            if spec.stride != 1 {
                return Err(Error::BadConfig {
                    field: "padding",
                    detail: format!("\"same\" requires stride 1, got {}", spec.stride),
                });
            }
            (eff - 1) / 2
        }
        Padding::Explicit(p) => p,
    };
    if h + 2 * pad < eff || w + 2 * pad < eff {
        return Err(Error::KernelMismatch {
            kernel: kernel.shape().to_vec(),
            input: input.shape().to_vec(),
            why: "effective kernel extent exceeds padded input",
        });
    }
    let ho = (h + 2 * pad - eff) / spec.stride + 1;
    let wo = (w + 2 * pad - eff) / spec.stride + 1;
    Ok(ConvGeom { b, ci, h, w, co, k, stride: spec.stride, dilation: spec.dilation, pad, ho, wo })
}

fn check_bias(bias: Option<&Tensor>, co: usize) -> Result<()> {
    if let Some(bt) = bias {
        if bt.shape() != [co] {
            return Err(Error::ShapeMismatch { left: bt.shape().to_vec(), right: vec![co] });
        }
    }
    Ok(())
}

/// Row-major matrix product C = A * B with explicit strides.
/// `m, kd, n` are the logical dimensions; strides are in elements.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm(
    m: usize,
    kd: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // Safety: callers size the slices to the logical dimensions and the
    // strides address only elements inside them.
    unsafe {
        matrixmultiply::dgemm(
            m, kd, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Patch matrix of shape `[ci*k*k, b*ho*wo]`; padding positions stay zero.
pub(crate) fn im2col(input: &Tensor, g: &ConvGeom) -> Vec<f64> {
    let n = g.b * g.ho * g.wo;
    let mut col = vec![0.0; g.ci * g.k * g.k * n];
    let data = input.data();
    let mut row_base = 0;
    for c in 0..g.ci {
        for i in 0..g.k {
            for j in 0..g.k {
                fill_tap_row(&mut col[row_base..row_base + n], data, g, c, i, j);
                row_base += n;
            }
        }
    }
    col
}

/// One (c, i, j) tap row of the patch matrix.
fn fill_tap_row(row: &mut [f64], data: &[f64], g: &ConvGeom, c: usize, i: usize, j: usize) {
    let (xs, xe) = valid_out_range(g.wo, g.w, g.stride, j * g.dilation, g.pad);
    for bi in 0..g.b {
        for y in 0..g.ho {
            let yy = (y * g.stride + i * g.dilation) as isize - g.pad as isize;
            if yy < 0 || yy >= g.h as isize {
                continue;
            }
            let src = ((bi * g.ci + c) * g.h + yy as usize) * g.w;
            let dst = (bi * g.ho + y) * g.wo;
            if xs >= xe {
                continue;
            }
            if g.stride == 1 {
                let src_x = xs + j * g.dilation - g.pad;
                row[dst + xs..dst + xe].copy_from_slice(&data[src + src_x..src + src_x + (xe - xs)]);
            } else {
                for x in xs..xe {
                    let xx = (x * g.stride + j * g.dilation) as isize - g.pad as isize;
                    row[dst + x] = data[src + xx as usize];
                }
            }
        }
    }
}

/// Output x-range whose tap `x*stride + off - pad` lies inside `[0, extent)`.
fn valid_out_range(out_extent: usize, extent: usize, stride: usize, off: usize, pad: usize) -> (usize, usize) {
    let lo = if off >= pad { 0 } else { (pad - off).div_ceil(stride) };
    if extent + pad < off + 1 {
        return (0, 0);
    }
    let hi = ((extent + pad - 1 - off) / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

/// Scatter-add of a patch-matrix gradient back onto input coordinates.
pub(crate) fn col2im_add(dcol: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.b * g.ho * g.wo;
    let mut dx = vec![0.0; g.b * g.ci * g.h * g.w];
    let mut row_base = 0;
    for c in 0..g.ci {
        for i in 0..g.k {
            for j in 0..g.k {
                let row = &dcol[row_base..row_base + n];
                row_base += n;
                let (xs, xe) = valid_out_range(g.wo, g.w, g.stride, j * g.dilation, g.pad);
                for bi in 0..g.b {
                    for y in 0..g.ho {
                        let yy = (y * g.stride + i * g.dilation) as isize - g.pad as isize;
                        if yy < 0 || yy >= g.h as isize {
                            continue;
                        }
                        let dst = ((bi * g.ci + c) * g.h + yy as usize) * g.w;
                        let src = (bi * g.ho + y) * g.wo;
                        for x in xs..xe {
                            let xx = x * g.stride + j * g.dilation - g.pad;
                            dx[dst + xx] += row[src + x];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Direct-loop convolution; the oracle the lowered path is checked against.
pub fn conv2d_direct(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Result<Tensor> {
    let g = geometry(input, kernel, spec)?;
    check_bias(bias, g.co)?;
    let mut out = vec![0.0; g.b * g.co * g.ho * g.wo];
    let mut idx = 0;
    for bi in 0..g.b {
        for o in 0..g.co {
            let b0 = bias.map_or(0.0, |t| t.data()[o]);
            for y in 0..g.ho {
                for x in 0..g.wo {
                    let mut acc = b0;
                    for c in 0..g.ci {
                        for i in 0..g.k {
                            let yy = (y * g.stride + i * g.dilation) as isize - g.pad as isize;
                            if yy < 0 || yy >= g.h as isize {
                                continue;
                            }
                            for j in 0..g.k {
                                let xx = (x * g.stride + j * g.dilation) as isize - g.pad as isize;
                                if xx < 0 || xx >= g.w as isize {
                                    continue;
                                }
                                acc += input.at4(bi, c, yy as usize, xx as usize)
                                    * kernel.at4(o, c, i, j);
                            }
                        }
                    }
                    out[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    Tensor::from_vec(&[g.b, g.co, g.ho, g.wo], out)
}

/// Lowered (patch-matrix) convolution; bitwise identical shape contract to
/// [`conv2d_direct`], values within 1e-12 relative.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Result<Tensor> {
    let g = geometry(input, kernel, spec)?;
    check_bias(bias, g.co)?;
    let n = g.b * g.ho * g.wo;
    let kk = g.ci * g.k * g.k;
    let col = im2col(input, &g);
    let mut yflat = vec![0.0; g.co * n];
    dgemm(g.co, kk, n, kernel.data(), kk as isize, 1, &col, n as isize, 1, &mut yflat);
    let plane = g.ho * g.wo;
    let mut out = vec![0.0; g.b * g.co * plane];
    for bi in 0..g.b {
        for o in 0..g.co {
            let b0 = bias.map_or(0.0, |t| t.data()[o]);
            let src = &yflat[o * n + bi * plane..o * n + (bi + 1) * plane];
            let dst = &mut out[(bi * g.co + o) * plane..(bi * g.co + o + 1) * plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b0;
            }
        }
    }
    Tensor::from_vec(&[g.b, g.co, g.ho, g.wo], out)
}

pub struct Conv2dGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Gradients of `conv2d` w.r.t. input, kernel and bias given the upstream
/// gradient. The input gradient is the adjoint (transposed-conv) scatter of
/// the upstream through the kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    spec: ConvSpec,
    grad_out: &Tensor,
) -> Result<Conv2dGrads> {
    let g = geometry(input, kernel, spec)?;
    let expected = [g.b, g.co, g.ho, g.wo];
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            left: grad_out.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    let n = g.b * g.ho * g.wo;
    let kk = g.ci * g.k * g.k;
    let plane = g.ho * g.wo;

    // Upstream rearranged to [co, b*ho*wo].
    let godata = grad_out.data();
    let mut dyflat = vec![0.0; g.co * n];
    for bi in 0..g.b {
        for o in 0..g.co {
            let src = &godata[(bi * g.co + o) * plane..(bi * g.co + o + 1) * plane];
            dyflat[o * n + bi * plane..o * n + (bi + 1) * plane].copy_from_slice(src);
        }
    }

    let mut dbias = vec![0.0; g.co];
    for o in 0..g.co {
        dbias[o] = dyflat[o * n..(o + 1) * n].iter().sum();
    }

    let col = im2col(input, &g);
    let mut dkernel = vec![0.0; g.co * kk];
    dgemm(g.co, n, kk, &dyflat, n as isize, 1, &col, 1, n as isize, &mut dkernel);

    let mut dcol = vec![0.0; kk * n];
    dgemm(kk, g.co, n, kernel.data(), 1, kk as isize, &dyflat, n as isize, 1, &mut dcol);
    let dinput = col2im_add(&dcol, &g);

    Ok(Conv2dGrads {
        input: Tensor::from_vec(input.shape(), dinput)?,
        kernel: Tensor::from_vec(kernel.shape(), dkernel)?,
        bias: Tensor::from_vec(&[g.co], dbias)?,
    })
}

/// Fractionally-strided convolution. `kernel` has the [`conv2d`] layout
/// interpreted adjointly: axis 0 is this op's input channels, axis 1 its
/// output channels, so `transposed_conv2d(conv2d-upstream, k)` is exactly
/// the conv input gradient for stride `s`, zero padding, dilation 1.
pub fn transposed_conv2d(input: &Tensor, kernel: &Tensor, stride: usize) -> Result<Tensor> {
    let (b, ci, h, w) = input.dims4()?;
    let (kci, co, k, kw) = kernel.dims4()?;
    if k != kw || kci != ci {
        return Err(Error::KernelMismatch {
            kernel: kernel.shape().to_vec(),
            input: input.shape().to_vec(),
            why: "kernel must be square with axis 0 equal to input channels",
        });
    }
    if stride == 0 {
        return Err(Error::ZeroParam { what: "stride", got: 0 });
    }
    let oh = (h - 1) * stride + k;
    let ow = (w - 1) * stride + k;
    let n2 = b * h * w;
    let cokk = co * k * k;

    let inflat = gather_channel_major(input);
    let mut outcol = vec![0.0; cokk * n2];
    dgemm(cokk, ci, n2, kernel.data(), 1, cokk as isize, &inflat, n2 as isize, 1, &mut outcol);

    let mut out = vec![0.0; b * co * oh * ow];
    let mut row = 0;
    for o in 0..co {
        for i in 0..k {
            for j in 0..k {
                let src_row = &outcol[row * n2..(row + 1) * n2];
                row += 1;
                for bi in 0..b {
                    for y in 0..h {
                        let dst = ((bi * co + o) * oh + y * stride + i) * ow + j;
                        let src = (bi * h + y) * w;
                        for x in 0..w {
                            out[dst + x * stride] += src_row[src + x];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, co, oh, ow], out)
}

/// Input rearranged to `[ci, b*h*w]`.
fn gather_channel_major(input: &Tensor) -> Vec<f64> {
    let (b, ci, h, w) = input.dims4().expect("4-d input");
    let plane = h * w;
    let n2 = b * plane;
    let data = input.data();
    let mut flat = vec![0.0; ci * n2];
    for bi in 0..b {
        for c in 0..ci {
            let src = &data[(bi * ci + c) * plane..(bi * ci + c + 1) * plane];
            flat[c * n2 + bi * plane..c * n2 + (bi + 1) * plane].copy_from_slice(src);
        }
    }
    flat
}

pub struct TransposedConv2dGrads {
    pub input: Tensor,
    pub kernel: Tensor,
}

pub fn transposed_conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    grad_out: &Tensor,
) -> Result<TransposedConv2dGrads> {
    let (b, ci, h, w) = input.dims4()?;
    let (_, co, k, _) = kernel.dims4()?;
    let oh = (h - 1) * stride + k;
    let ow = (w - 1) * stride + k;
    if grad_out.shape() != [b, co, oh, ow] {
        return Err(Error::ShapeMismatch {
            left: grad_out.shape().to_vec(),
            right: vec![b, co, oh, ow],
        });
    }
    // The upstream gradient plays the role of a conv2d input whose patch
    // matrix lines up with the forward scatter.
    let g = ConvGeom {
        b,
        ci: co,
        h: oh,
        w: ow,
        co: ci,
        k,
        stride,
        dilation: 1,
        pad: 0,
        ho: h,
        wo: w,
    };
    let n2 = b * h * w;
    let cokk = co * k * k;
    let docol = im2col(grad_out, &g);

    let mut dinflat = vec![0.0; ci * n2];
    dgemm(ci, cokk, n2, kernel.data(), cokk as isize, 1, &docol, n2 as isize, 1, &mut dinflat);
    let mut dinput = vec![0.0; b * ci * h * w];
    let plane = h * w;
    for bi in 0..b {
        for c in 0..ci {
            let src = &dinflat[c * n2 + bi * plane..c * n2 + (bi + 1) * plane];
            dinput[(bi * ci + c) * plane..(bi * ci + c + 1) * plane].copy_from_slice(src);
        }
    }

    let inflat = gather_channel_major(input);
    let mut dkernel = vec![0.0; ci * cokk];
    dgemm(ci, n2, cokk, &inflat, n2 as isize, 1, &docol, 1, n2 as isize, &mut dkernel);

    Ok(TransposedConv2dGrads {
        input: Tensor::from_vec(input.shape(), dinput)?,
        kernel: Tensor::from_vec(kernel.shape(), dkernel)?,
    })
}

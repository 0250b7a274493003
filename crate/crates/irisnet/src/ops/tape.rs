//! Reverse-mode differentiation over a recorded op graph.
//!
//! Forward calls both compute and record. Every produced value lives in an
//! arena indexed by [`ValueId`]; each op node remembers its argument ids and
//! whatever intermediates its backward rule needs. [`Tape::backward`] seeds
//! a gradient at one value and sweeps the nodes in strict reverse recording
//! order, accumulating into a per-value gradient table. Leaves the sweep
//! never reaches keep a zero gradient.

use crate::error::{Error, Result};
use crate::ops::activation::{
    relu, relu_backward, softmax_channels, softmax_channels_backward,
};
use crate::ops::conv::{
    conv2d, conv2d_backward, transposed_conv2d, transposed_conv2d_backward, ConvSpec,
};
use crate::ops::norm::{batchnorm_backward, batchnorm_train, BnCache, BnRunning};
use crate::ops::pool::{maxpool2d, maxpool2d_backward};
use crate::retina::{
    compose_kernels, retina_conv_forward, scatter_composed_grad, RetinaConvLayer,
};
use crate::tensor::Tensor;
use crate::train::loss::{bce_loss, bce_loss_backward, dice_loss, dice_loss_backward};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

enum Node {
    /// Leaf: an input batch, a constant, or a learnable parameter.
    Leaf,
    Conv2d { input: ValueId, kernel: ValueId, bias: ValueId, spec: ConvSpec },
    Retina { input: ValueId, g: ValueId, h: ValueId, bias: ValueId, dilation: usize },
    TransposedConv { input: ValueId, kernel: ValueId, stride: usize },
    MaxPool { input: ValueId, argmax: Vec<usize> },
    BatchNorm { input: ValueId, gamma: ValueId, beta: ValueId, cache: BnCache },
    Relu { input: ValueId },
    SoftmaxChannels { input: ValueId },
    ConcatChannels { a: ValueId, b: ValueId },
    DiceLoss { pred: ValueId, target: Tensor, smooth: f64 },
    BceLoss { pred: ValueId, target: Tensor, clamp: f64 },
    AddScalars { a: ValueId, b: ValueId },
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, node: Node) -> ValueId {
        self.values.push(value);
        self.nodes.push(node);
        ValueId(self.values.len() - 1)
    }

    /// Registers a leaf value (input batch or parameter).
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Node::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
        spec: ConvSpec,
    ) -> Result<ValueId> {
        let out = conv2d(
            &self.values[input.0],
            &self.values[kernel.0],
            Some(&self.values[bias.0]),
            spec,
        )?;
        Ok(self.push(out, Node::Conv2d { input, kernel, bias, spec }))
    }

    pub fn retina_conv(
        &mut self,
        input: ValueId,
        g: ValueId,
        h: ValueId,
        bias: ValueId,
        dilation: usize,
    ) -> Result<ValueId> {
        let layer = RetinaConvLayer::new(
            self.values[g.0].clone(),
            self.values[h.0].clone(),
            dilation,
            self.values[bias.0].clone(),
        )?;
        let out = retina_conv_forward(&self.values[input.0], &layer)?;
        Ok(self.push(out, Node::Retina { input, g, h, bias, dilation }))
    }

    pub fn transposed_conv2d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        stride: usize,
    ) -> Result<ValueId> {
        let out = transposed_conv2d(&self.values[input.0], &self.values[kernel.0], stride)?;
        Ok(self.push(out, Node::TransposedConv { input, kernel, stride }))
    }

    pub fn maxpool2d(&mut self, input: ValueId) -> Result<ValueId> {
        let pooled = maxpool2d(&self.values[input.0])?;
        Ok(self.push(pooled.output, Node::MaxPool { input, argmax: pooled.argmax }))
    }

    /// Training-mode batch norm; updates `running` as a side effect.
    pub fn batchnorm_train(
        &mut self,
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running: &mut BnRunning,
        eps: f64,
        momentum: f64,
    ) -> Result<ValueId> {
        let (out, cache) = batchnorm_train(
            &self.values[input.0],
            &self.values[gamma.0],
            &self.values[beta.0],
            running,
            eps,
            momentum,
        )?;
        Ok(self.push(out, Node::BatchNorm { input, gamma, beta, cache }))
    }

    pub fn relu(&mut self, input: ValueId) -> Result<ValueId> {
        let out = relu(&self.values[input.0])?;
        Ok(self.push(out, Node::Relu { input }))
    }

    pub fn softmax_channels(&mut self, input: ValueId) -> Result<ValueId> {
        let out = softmax_channels(&self.values[input.0])?;
        Ok(self.push(out, Node::SoftmaxChannels { input }))
    }

    pub fn concat_channels(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.values[a.0].concat_channels(&self.values[b.0])?;
        Ok(self.push(out, Node::ConcatChannels { a, b }))
    }

    pub fn dice_loss(&mut self, pred: ValueId, target: &Tensor, smooth: f64) -> Result<ValueId> {
        let loss = dice_loss(&self.values[pred.0], target, smooth)?;
        let out = Tensor::from_vec(&[1], vec![loss])?;
        Ok(self.push(out, Node::DiceLoss { pred, target: target.clone(), smooth }))
    }

    pub fn bce_loss(&mut self, pred: ValueId, target: &Tensor, clamp: f64) -> Result<ValueId> {
        let loss = bce_loss(&self.values[pred.0], target, clamp)?;
        let out = Tensor::from_vec(&[1], vec![loss])?;
        Ok(self.push(out, Node::BceLoss { pred, target: target.clone(), clamp }))
    }

    pub fn add_scalars(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.values[a.0].elementwise_add(&self.values[b.0])?;
        Ok(self.push(out, Node::AddScalars { a, b }))
    }

    /// Reverse sweep from `output` seeded with `seed` (same shape as the
    /// output value). Returns one gradient slot per recorded value.
    pub fn backward(&self, output: ValueId, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.values[output.0].shape() {
            return Err(Error::ShapeMismatch {
                left: seed.shape().to_vec(),
                right: self.values[output.0].shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            match &self.nodes[idx] {
                Node::Leaf => {
                    grads[idx] = Some(gout);
                    continue;
                }
                Node::Conv2d { input, kernel, bias, spec } => {
                    let g = conv2d_backward(
                        &self.values[input.0],
                        &self.values[kernel.0],
                        *spec,
                        &gout,
                    )?;
                    accumulate(&mut grads, *input, g.input);
                    accumulate(&mut grads, *kernel, g.kernel);
                    accumulate(&mut grads, *bias, g.bias);
                }
                Node::Retina { input, g, h, bias, dilation } => {
                    let layer = RetinaConvLayer::new(
                        self.values[g.0].clone(),
                        self.values[h.0].clone(),
                        *dilation,
                        self.values[bias.0].clone(),
                    )?;
                    let composed = compose_kernels(&layer)?;
                    let cg = conv2d_backward(
                        &self.values[input.0],
                        &composed,
                        ConvSpec::same(1),
                        &gout,
                    )?;
                    let (dg, dh) = scatter_composed_grad(&layer, &cg.kernel)?;
                    accumulate(&mut grads, *input, cg.input);
                    accumulate(&mut grads, *g, dg);
                    accumulate(&mut grads, *h, dh);
                    accumulate(&mut grads, *bias, cg.bias);
                }
                Node::TransposedConv { input, kernel, stride } => {
                    let g = transposed_conv2d_backward(
                        &self.values[input.0],
                        &self.values[kernel.0],
                        *stride,
                        &gout,
                    )?;
                    accumulate(&mut grads, *input, g.input);
                    accumulate(&mut grads, *kernel, g.kernel);
                }
                Node::MaxPool { input, argmax } => {
                    let dx = maxpool2d_backward(self.values[input.0].shape(), argmax, &gout)?;
                    accumulate(&mut grads, *input, dx);
                }
                Node::BatchNorm { input, gamma, beta, cache } => {
                    let (dx, dgamma, dbeta) =
                        batchnorm_backward(&gout, cache, &self.values[gamma.0])?;
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Node::Relu { input } => {
                    let dx = relu_backward(&self.values[input.0], &gout)?;
                    accumulate(&mut grads, *input, dx);
                }
                Node::SoftmaxChannels { input } => {
                    let dx = softmax_channels_backward(&self.values[idx], &gout)?;
                    accumulate(&mut grads, *input, dx);
                }
                Node::ConcatChannels { a, b } => {
                    let ca = self.values[a.0].shape()[1];
                    let ctot = self.values[idx].shape()[1];
                    let da = gout.slice_channels(0, ca)?;
                    let db = gout.slice_channels(ca, ctot)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Node::DiceLoss { pred, target, smooth } => {
                    let up = gout.data()[0];
                    let dp = dice_loss_backward(&self.values[pred.0], target, *smooth, up)?;
                    accumulate(&mut grads, *pred, dp);
                }
                Node::BceLoss { pred, target, clamp } => {
                    let up = gout.data()[0];
                    let dp = bce_loss_backward(&self.values[pred.0], target, *clamp, up)?;
                    accumulate(&mut grads, *pred, dp);
                }
                Node::AddScalars { a, b } => {
                    accumulate(&mut grads, *a, gout.clone());
                    accumulate(&mut grads, *b, gout);
                }
            }
        }

        let shapes = self.values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Re-executes every recorded op from its recorded inputs and returns
    /// the largest absolute deviation from the recorded outputs. A faithful
    /// record replays to exactly 0 (batch norm is replayed from the cached
    /// normalization, which is deterministic given the same inputs).
    pub fn replay_max_deviation(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for (idx, node) in self.nodes.iter().enumerate() {
            let recorded = &self.values[idx];
            let recomputed = match node {
                Node::Leaf => continue,
                Node::Conv2d { input, kernel, bias, spec } => conv2d(
                    &self.values[input.0],
                    &self.values[kernel.0],
                    Some(&self.values[bias.0]),
                    *spec,
                )?,
                Node::Retina { input, g, h, bias, dilation } => {
                    let layer = RetinaConvLayer::new(
                        self.values[g.0].clone(),
                        self.values[h.0].clone(),
                        *dilation,
                        self.values[bias.0].clone(),
                    )?;
                    retina_conv_forward(&self.values[input.0], &layer)?
                }
                Node::TransposedConv { input, kernel, stride } => {
                    transposed_conv2d(&self.values[input.0], &self.values[kernel.0], *stride)?
                }
                Node::MaxPool { input, .. } => maxpool2d(&self.values[input.0])?.output,
                Node::BatchNorm { input, gamma, beta, cache } => {
                    // Reapply the cached normalization affinely.
                    let xh = &cache.x_hat;
                    let (b, c, h, w) = xh.dims4()?;
                    let plane = h * w;
                    let mut out = vec![0.0; xh.len()];
                    for bi in 0..b {
                        for ch in 0..c {
                            let s = (bi * c + ch) * plane;
                            let g = self.values[gamma.0].data()[ch];
                            let be = self.values[beta.0].data()[ch];
                            for i in s..s + plane {
                                out[i] = g * xh.data()[i] + be;
                            }
                        }
                    }
                    let _ = input;
                    Tensor::from_vec(xh.shape(), out)?
                }
                Node::Relu { input } => relu(&self.values[input.0])?,
                Node::SoftmaxChannels { input } => softmax_channels(&self.values[input.0])?,
                Node::ConcatChannels { a, b } => {
                    self.values[a.0].concat_channels(&self.values[b.0])?
                }
                Node::DiceLoss { pred, target, smooth } => Tensor::from_vec(
                    &[1],
                    vec![dice_loss(&self.values[pred.0], target, *smooth)?],
                )?,
                Node::BceLoss { pred, target, clamp } => Tensor::from_vec(
                    &[1],
                    vec![bce_loss(&self.values[pred.0], target, *clamp)?],
                )?,
                Node::AddScalars { a, b } => {
                    self.values[a.0].elementwise_add(&self.values[b.0])?
                }
            };
            worst = worst.max(recorded.max_abs_diff(&recomputed));
        }
        Ok(worst)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: ValueId, add: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.accumulate(&add),
        slot @ None => *slot = Some(add),
    }
}

/// Per-value gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// The gradient for `id`, or a zero tensor if the sweep never reached it
    /// (an unused parameter has exactly zero gradient).
    pub fn take(&mut self, id: ValueId) -> Tensor {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]).expect("recorded shape is valid"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = seeded_rng(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn chain_through_relu_and_pool_routes_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[1, 1, 4, 4], 3));
        let r = tape.relu(x).unwrap();
        let p = tape.maxpool2d(r).unwrap();
        let seed = Tensor::filled(tape.value(p).shape(), 1.0).unwrap();
        let mut grads = tape.backward(p, &seed).unwrap();
        let dx = grads.take(x);
        // Each pooled window contributes to exactly one positive input.
        let nonzero = dx.data().iter().filter(|v| **v != 0.0).count();
        assert!(nonzero <= 4);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[1, 2, 2, 2], 4));
        let unused = tape.leaf(rand_tensor(&[3, 2, 1, 1], 5));
        let r = tape.relu(x).unwrap();
        let seed = Tensor::filled(tape.value(r).shape(), 1.0).unwrap();
        let mut grads = tape.backward(r, &seed).unwrap();
        assert!(grads.get(unused).is_none());
        let dz = grads.take(unused);
        assert_eq!(dz.shape(), &[3, 2, 1, 1]);
        assert!(dz.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn value_reused_twice_accumulates_both_paths() {
        // loss = dice(softmax(x)) + bce(softmax(x)): softmax output feeds
        // two loss nodes, so its gradient is the sum of both.
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[1, 2, 2, 2], 6));
        let sm = tape.softmax_channels(x).unwrap();
        let target = {
            let fg = [1.0, 0.0, 0.0, 1.0];
            let mut data = vec![0.0; 8];
            for i in 0..4 {
                data[i] = 1.0 - fg[i];
                data[4 + i] = fg[i];
            }
            Tensor::from_vec(&[1, 2, 2, 2], data).unwrap()
        };
        let d = tape.dice_loss(sm, &target, 1e-6).unwrap();
        let b = tape.bce_loss(sm, &target, 1e-7).unwrap();
        let total = tape.add_scalars(d, b).unwrap();
        let seed = Tensor::filled(&[1], 1.0).unwrap();
        let mut gsum = tape.backward(total, &seed).unwrap();
        let mut gd = tape.backward(d, &seed).unwrap();
        let mut gb = tape.backward(b, &seed).unwrap();
        let want = gd.take(x).elementwise_add(&gb.take(x)).unwrap();
        let got = gsum.take(x);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn backward_seed_shape_must_match_output() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[1, 1, 2, 2], 7));
        let r = tape.relu(x).unwrap();
        let bad = Tensor::filled(&[2], 1.0).unwrap();
        assert!(tape.backward(r, &bad).is_err());
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(rand_tensor(&[2, 1, 4, 4], 8));
        let kernel = tape.leaf(rand_tensor(&[2, 1, 3, 3], 9));
        let bias = tape.leaf(rand_tensor(&[2], 10));
        let c = tape.conv2d(x, kernel, bias, ConvSpec::same(1)).unwrap();
        let r = tape.relu(c).unwrap();
        let _ = tape.maxpool2d(r).unwrap();
        assert_eq!(tape.replay_max_deviation().unwrap(), 0.0);
    }
}

//! The IrisNet encoder-decoder built from RetinaConv blocks.
//!
//! Shape discipline: the encoder halves H and W once per level via 2x2 max
//! pool; the decoder doubles them back with 2x2 stride-2 transposed convs and
//! concatenates the matching encoder activation before each conv pair. All
//! interior convolutions are stride-1 "same", so only pool/upsample change
//! extents. The head is a 1x1 convolution to two classes followed by a
//! channel softmax: channel 0 is background, channel 1 foreground.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::activation::{relu, softmax_channels};
use crate::ops::conv::{conv2d, transposed_conv2d, ConvSpec};
use crate::ops::norm::{batchnorm_eval, batchnorm_train, BnRunning};
use crate::ops::pool::maxpool2d;
use crate::ops::tape::{Tape, ValueId};
use crate::retina::{retina_conv_forward, retina_conv_reference, RetinaConvLayer};
use crate::rng::{derive_seed, seeded_rng, stream};
use crate::tensor::Tensor;
use rand::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Name of the weight-init scheme, recorded in checkpoint headers.
pub const INIT_SCHEME: &str = "he-uniform-fan-in";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Number of encoder levels (equivalently, of pooling steps when the
    /// explicit bottleneck is present).
    pub depth: usize,
    /// Channels of the first encoder level; each level doubles them.
    pub base_filters: usize,
    /// Side of the standard (undilated) kernel in every RetinaConv.
    pub kernel_size_standard: usize,
    /// Side of the dilated kernel in every RetinaConv.
    pub kernel_size_dilated: usize,
    /// Per-stage dilation for the dilated kernel, ordered encoder top to
    /// bottom, then bottleneck (if present), then decoder bottom to top.
    /// First and last entries must be 1.
    pub dilation_schedule: Vec<usize>,
    /// Input images are square with this side.
    pub input_size: usize,
    pub in_channels: usize,
    /// Output classes; exactly 2 (background, foreground).
    pub out_classes: usize,
    /// Whether a distinct bottleneck block pair sits below the last pool.
    /// Without it the deepest encoder level doubles as the bottom of the U.
    pub bottleneck: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            depth: 4,
            base_filters: 16,
            kernel_size_standard: 3,
            kernel_size_dilated: 3,
            dilation_schedule: vec![1, 2, 2, 2, 2, 2, 2, 2, 1],
            input_size: 128,
            in_channels: 1,
            out_classes: 2,
            bottleneck: true,
        }
    }
}

impl ArchConfig {
    /// Stages needing a dilation entry: encoder levels, bottleneck if
    /// present, decoder levels.
    pub fn schedule_len(&self) -> usize {
        if self.bottleneck {
            2 * self.depth + 1
        } else {
            2 * self.depth - 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::BadArch { field: "depth", detail: "must be >= 1".into() });
        }
        if self.base_filters == 0 {
            return Err(Error::BadArch { field: "base_filters", detail: "must be >= 1".into() });
        }
        for (what, k) in [
            ("kernel_size_standard", self.kernel_size_standard),
            ("kernel_size_dilated", self.kernel_size_dilated),
        ] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::BadArch { field: what, detail: format!("must be odd, got {k}") });
            }
        }
        if self.in_channels == 0 {
            return Err(Error::BadArch { field: "in_channels", detail: "must be >= 1".into() });
        }
        if self.out_classes != 2 {
            return Err(Error::BadArch {
                field: "out_classes",
                detail: format!("exactly 2 supported, got {}", self.out_classes),
            });
        }
        let div = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::BadArch {
                field: "input_size",
                detail: format!("{} not divisible by 2^depth = {div}", self.input_size),
            });
        }
        let want = self.schedule_len();
        if self.dilation_schedule.len() != want {
            return Err(Error::BadArch {
                field: "dilation_schedule",
                detail: format!("needs {want} entries, got {}", self.dilation_schedule.len()),
            });
        }
        if self.dilation_schedule.iter().any(|&d| d == 0) {
            return Err(Error::BadArch {
                field: "dilation_schedule",
                detail: "entries must be >= 1".into(),
            });
        }
        if self.dilation_schedule[0] != 1 || *self.dilation_schedule.last().unwrap() != 1 {
            return Err(Error::BadArch {
                field: "dilation_schedule",
                detail: "first and last entries must be 1".into(),
            });
        }
        Ok(())
    }

    /// A depth-aware default schedule: 1 at both ends, `interior` elsewhere.
    pub fn schedule_with_interior(depth: usize, bottleneck: bool, interior: usize) -> Vec<usize> {
        let len = if bottleneck { 2 * depth + 1 } else { 2 * depth - 1 };
        let mut v = vec![interior; len];
        v[0] = 1;
        *v.last_mut().unwrap() = 1;
        v
    }
}

/// RetinaConv -> batch norm -> ReLU.
#[derive(Debug)]
pub struct ConvBlock {
    pub retina: RetinaConvLayer,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: BnRunning,
}

#[derive(Debug)]
pub struct EncoderLevel {
    pub block1: ConvBlock,
    pub block2: ConvBlock,
}

#[derive(Debug)]
pub struct DecoderLevel {
    /// Transposed-conv kernel `[c_below, c_level, 2, 2]`, stride 2.
    pub upsample: Tensor,
    pub block1: ConvBlock,
    pub block2: ConvBlock,
}

#[derive(Debug)]
pub struct Model {
    pub config: ArchConfig,
    pub encoder: Vec<EncoderLevel>,
    pub bottleneck: Option<(ConvBlock, ConvBlock)>,
    /// Ordered deepest level first, so iteration order matches the forward
    /// pass up the decoder.
    pub decoder: Vec<DecoderLevel>,
    pub head_kernel: Tensor,
    pub head_bias: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which forward route the RetinaConv layers take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvRoute {
    /// Composed-kernel single pass.
    Fused,
    /// Standard conv + dilated conv + bias, summed.
    TwoPass,
}

struct Init {
    rng: rand_chacha::ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Result<Tensor> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
    }

    fn conv_block(&mut self, ci: usize, co: usize, ks: usize, kd: usize, d: usize) -> Result<ConvBlock> {
        // Both kernels sum into one response, so the draw is scaled by the
        // combined tap count.
        let fan_in = ci * (ks * ks + kd * kd);
        let retina = RetinaConvLayer::new(
            self.uniform(&[co, ci, ks, ks], fan_in)?,
            self.uniform(&[co, ci, kd, kd], fan_in)?,
            d,
            Tensor::zeros(&[co])?,
        )?;
        Ok(ConvBlock {
            retina,
            gamma: Tensor::filled(&[co], 1.0)?,
            beta: Tensor::zeros(&[co])?,
            running: BnRunning::new(co)?,
        })
    }
}

/// Stage layout derived from an [`ArchConfig`]: channel widths and dilation
/// per structural position.
struct Layout {
    enc_ch: Vec<usize>,
    bottom_ch: usize,
    enc_dil: Vec<usize>,
    bottleneck_dil: usize,
    /// Indexed by decoder level (same index as the encoder skip it consumes).
    dec_dil: Vec<usize>,
    dec_levels: usize,
}

fn layout(config: &ArchConfig) -> Layout {
    let d = config.depth;
    let sched = &config.dilation_schedule;
    let enc_ch: Vec<usize> = (0..d).map(|i| config.base_filters << i).collect();
    if config.bottleneck {
        Layout {
            bottom_ch: config.base_filters << d,
            enc_dil: sched[..d].to_vec(),
            bottleneck_dil: sched[d],
            dec_dil: (0..d).map(|i| sched[2 * d - i]).collect(),
            dec_levels: d,
            enc_ch,
        }
    } else {
        Layout {
            bottom_ch: enc_ch[d - 1],
            enc_dil: sched[..d].to_vec(),
            bottleneck_dil: 1, // unused
            dec_dil: (0..d - 1).map(|i| sched[2 * (d - 1) - i]).collect(),
            dec_levels: d - 1,
            enc_ch,
        }
    }
}

/// Builds a freshly initialized network. All weight draws come from one
/// seeded stream in declaration order, so equal (config, seed) pairs give
/// bit-identical models.
pub fn build_model(config: &ArchConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let lay = layout(config);
    let (ks, kd) = (config.kernel_size_standard, config.kernel_size_dilated);
    let mut init = Init { rng: seeded_rng(derive_seed(seed, stream::INIT, 0)) };

    let mut encoder = Vec::with_capacity(config.depth);
    let mut prev = config.in_channels;
    for (i, &ch) in lay.enc_ch.iter().enumerate() {
        let d = lay.enc_dil[i];
        encoder.push(EncoderLevel {
            block1: init.conv_block(prev, ch, ks, kd, d)?,
            block2: init.conv_block(ch, ch, ks, kd, d)?,
        });
        prev = ch;
    }

    let bottleneck = if config.bottleneck {
        let d = lay.bottleneck_dil;
        let b1 = init.conv_block(prev, lay.bottom_ch, ks, kd, d)?;
        let b2 = init.conv_block(lay.bottom_ch, lay.bottom_ch, ks, kd, d)?;
        prev = lay.bottom_ch;
        Some((b1, b2))
    } else {
        None
    };

    let mut decoder = Vec::with_capacity(lay.dec_levels);
    for i in (0..lay.dec_levels).rev() {
        let ch = lay.enc_ch[i];
        let d = lay.dec_dil[i];
        let upsample = init.uniform(&[prev, ch, 2, 2], prev * 4)?;
        decoder.push(DecoderLevel {
            upsample,
            block1: init.conv_block(2 * ch, ch, ks, kd, d)?,
            block2: init.conv_block(ch, ch, ks, kd, d)?,
        });
        prev = ch;
    }

    let head_kernel = init.uniform(&[config.out_classes, prev, 1, 1], prev)?;
    let head_bias = Tensor::zeros(&[config.out_classes])?;

    Ok(Model { config: config.clone(), encoder, bottleneck, decoder, head_kernel, head_bias })
}

impl Model {
    /// Learnable scalar count; batch-norm running statistics are state, not
    /// parameters, and are excluded.
    pub fn count_parameters(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    /// Every learnable tensor in declaration order. This ordering is the
    /// contract shared by the optimizer state, checkpoint files, and the
    /// recorded forward pass.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for level in &self.encoder {
            push_block(&level.block1, &mut out);
            push_block(&level.block2, &mut out);
        }
        if let Some((b1, b2)) = &self.bottleneck {
            push_block(b1, &mut out);
            push_block(b2, &mut out);
        }
        for level in &self.decoder {
            out.push(&level.upsample);
            push_block(&level.block1, &mut out);
            push_block(&level.block2, &mut out);
        }
        out.push(&self.head_kernel);
        out.push(&self.head_bias);
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for level in &mut self.encoder {
            push_block_mut(&mut level.block1, &mut out);
            push_block_mut(&mut level.block2, &mut out);
        }
        if let Some((b1, b2)) = &mut self.bottleneck {
            push_block_mut(b1, &mut out);
            push_block_mut(b2, &mut out);
        }
        for level in &mut self.decoder {
            out.push(&mut level.upsample);
            push_block_mut(&mut level.block1, &mut out);
            push_block_mut(&mut level.block2, &mut out);
        }
        out.push(&mut self.head_kernel);
        out.push(&mut self.head_bias);
        out
    }

    /// Diagnostic names aligned with [`Model::param_tensors`].
    pub fn param_names(&self) -> Vec<String> {
        fn block(prefix: String, out: &mut Vec<String>) {
            for part in ["standard", "dilated", "bias", "gamma", "beta"] {
                out.push(format!("{prefix}.{part}"));
            }
        }
        let mut out = Vec::new();
        for i in 0..self.encoder.len() {
            block(format!("encoder{i}.block1"), &mut out);
            block(format!("encoder{i}.block2"), &mut out);
        }
        if self.bottleneck.is_some() {
            block("bottleneck.block1".into(), &mut out);
            block("bottleneck.block2".into(), &mut out);
        }
        for (pos, _) in self.decoder.iter().enumerate() {
            let level = self.decoder.len() - 1 - pos;
            out.push(format!("decoder{level}.upsample"));
            block(format!("decoder{level}.block1"), &mut out);
            block(format!("decoder{level}.block2"), &mut out);
        }
        out.push("head.kernel".into());
        out.push("head.bias".into());
        out
    }

    /// Running statistics of every batch-norm layer in declaration order.
    pub fn bn_running(&self) -> Vec<&BnRunning> {
        let mut out = Vec::new();
        for level in &self.encoder {
            out.push(&level.block1.running);
            out.push(&level.block2.running);
        }
        if let Some((b1, b2)) = &self.bottleneck {
            out.push(&b1.running);
            out.push(&b2.running);
        }
        for level in &self.decoder {
            out.push(&level.block1.running);
            out.push(&level.block2.running);
        }
        out
    }

    pub fn bn_running_mut(&mut self) -> Vec<&mut BnRunning> {
        let mut out = Vec::new();
        for level in &mut self.encoder {
            out.push(&mut level.block1.running);
            out.push(&mut level.block2.running);
        }
        if let Some((b1, b2)) = &mut self.bottleneck {
            out.push(&mut b1.running);
            out.push(&mut b2.running);
        }
        for level in &mut self.decoder {
            out.push(&mut level.block1.running);
            out.push(&mut level.block2.running);
        }
        out
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let (_, c, h, w) = batch.dims4()?;
        let s = self.config.input_size;
        if c != self.config.in_channels || h != s || w != s {
            return Err(Error::ShapeMismatch {
                left: batch.shape().to_vec(),
                right: vec![batch.shape()[0], self.config.in_channels, s, s],
            });
        }
        Ok(())
    }

    /// Probability maps `[B, 2, H, W]`, mode chosen by the caller. Training
    /// mode uses batch statistics and updates the running ones; eval mode is
    /// read-only and requires populated running statistics.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => self.forward_train_unrecorded(batch),
            Mode::Eval => self.forward_eval(batch),
        }
    }

    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward_eval_with(batch, ConvRoute::Fused)
    }

    /// Eval forward with an explicit RetinaConv route; `TwoPass` is the
    /// benchmark baseline and must produce the same predictions.
    pub fn forward_eval_with(&self, batch: &Tensor, route: ConvRoute) -> Result<Tensor> {
        self.check_batch(batch)?;
        let conv = |x: &Tensor, b: &ConvBlock| -> Result<Tensor> {
            let pre = match route {
                ConvRoute::Fused => retina_conv_forward(x, &b.retina)?,
                ConvRoute::TwoPass => retina_conv_reference(x, &b.retina)?,
            };
            relu(&batchnorm_eval(&pre, &b.gamma, &b.beta, &b.running, BN_EPS)?)
        };

        let mut x = batch.clone();
        let mut skips = Vec::new();
        for (i, level) in self.encoder.iter().enumerate() {
            x = conv(&x, &level.block1)?;
            x = conv(&x, &level.block2)?;
            let pools = self.bottleneck.is_some() || i + 1 < self.encoder.len();
            if pools {
                skips.push(x.clone());
                x = maxpool2d(&x)?.output;
            }
        }
        if let Some((b1, b2)) = &self.bottleneck {
            x = conv(&x, b1)?;
            x = conv(&x, b2)?;
        }
        for level in &self.decoder {
            let up = transposed_conv2d(&x, &level.upsample, 2)?;
            let skip = skips.pop().expect("one skip per decoder level");
            x = skip.concat_channels(&up)?;
            x = conv(&x, &level.block1)?;
            x = conv(&x, &level.block2)?;
        }
        let logits = conv2d(&x, &self.head_kernel, Some(&self.head_bias), ConvSpec::same(1))?;
        softmax_channels(&logits)
    }

    /// Training-mode forward without a tape: batch statistics, running-stat
    /// updates, no gradient record.
    pub fn forward_train_unrecorded(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        fn conv(x: &Tensor, b: &mut ConvBlock) -> Result<Tensor> {
            let pre = retina_conv_forward(x, &b.retina)?;
            let (normed, _) =
                batchnorm_train(&pre, &b.gamma, &b.beta, &mut b.running, BN_EPS, BN_MOMENTUM)?;
            relu(&normed)
        }
        let mut x = batch.clone();
        let mut skips = Vec::new();
        let enc_len = self.encoder.len();
        let has_bottleneck = self.bottleneck.is_some();
        for (i, level) in self.encoder.iter_mut().enumerate() {
            x = conv(&x, &mut level.block1)?;
            x = conv(&x, &mut level.block2)?;
            if has_bottleneck || i + 1 < enc_len {
                skips.push(x.clone());
                x = maxpool2d(&x)?.output;
            }
        }
        if let Some((b1, b2)) = &mut self.bottleneck {
            x = conv(&x, b1)?;
            x = conv(&x, b2)?;
        }
        for level in &mut self.decoder {
            let up = transposed_conv2d(&x, &level.upsample, 2)?;
            let skip = skips.pop().expect("one skip per decoder level");
            x = skip.concat_channels(&up)?;
            x = conv(&x, &mut level.block1)?;
            x = conv(&x, &mut level.block2)?;
        }
        let logits = conv2d(&x, &self.head_kernel, Some(&self.head_bias), ConvSpec::same(1))?;
        softmax_channels(&logits)
    }

    /// Records a training-mode forward on `tape`. Returns the output id plus
    /// the parameter leaf ids in declaration order (aligned with
    /// [`Model::param_tensors`]).
    pub fn forward_train_recorded(&mut self, tape: &mut Tape, batch: &Tensor) -> Result<Recorded> {
        self.check_batch(batch)?;
        let mut params = Vec::new();

        struct BlockIds {
            g: ValueId,
            h: ValueId,
            bias: ValueId,
            gamma: ValueId,
            beta: ValueId,
        }
        fn push_block_ids(tape: &mut Tape, b: &ConvBlock, params: &mut Vec<ValueId>) -> BlockIds {
            let ids = BlockIds {
                g: tape.leaf(b.retina.standard.clone()),
                h: tape.leaf(b.retina.dilated.clone()),
                bias: tape.leaf(b.retina.bias.clone()),
                gamma: tape.leaf(b.gamma.clone()),
                beta: tape.leaf(b.beta.clone()),
            };
            params.extend([ids.g, ids.h, ids.bias, ids.gamma, ids.beta]);
            ids
        }
        fn conv(
            tape: &mut Tape,
            x: ValueId,
            b: &mut ConvBlock,
            ids: &BlockIds,
            dilation: usize,
        ) -> Result<ValueId> {
            let pre = tape.retina_conv(x, ids.g, ids.h, ids.bias, dilation)?;
            let normed =
                tape.batchnorm_train(pre, ids.gamma, ids.beta, &mut b.running, BN_EPS, BN_MOMENTUM)?;
            tape.relu(normed)
        }

        let mut x = tape.leaf(batch.clone());
        let input_id = x;
        let mut skips = Vec::new();
        let enc_len = self.encoder.len();
        let has_bottleneck = self.bottleneck.is_some();
        for (i, level) in self.encoder.iter_mut().enumerate() {
            let ids1 = push_block_ids(tape, &level.block1, &mut params);
            let d = level.block1.retina.dilation;
            x = conv(tape, x, &mut level.block1, &ids1, d)?;
            let ids2 = push_block_ids(tape, &level.block2, &mut params);
            x = conv(tape, x, &mut level.block2, &ids2, d)?;
            if has_bottleneck || i + 1 < enc_len {
                skips.push(x);
                x = tape.maxpool2d(x)?;
            }
        }
        if let Some((b1, b2)) = &mut self.bottleneck {
            let d = b1.retina.dilation;
            let ids1 = push_block_ids(tape, b1, &mut params);
            x = conv(tape, x, b1, &ids1, d)?;
            let ids2 = push_block_ids(tape, b2, &mut params);
            x = conv(tape, x, b2, &ids2, d)?;
        }
        for level in &mut self.decoder {
            let up_id = tape.leaf(level.upsample.clone());
            params.push(up_id);
            let up = tape.transposed_conv2d(x, up_id, 2)?;
            let skip = skips.pop().expect("one skip per decoder level");
            x = tape.concat_channels(skip, up)?;
            let d = level.block1.retina.dilation;
            let ids1 = push_block_ids(tape, &level.block1, &mut params);
            x = conv(tape, x, &mut level.block1, &ids1, d)?;
            let ids2 = push_block_ids(tape, &level.block2, &mut params);
            x = conv(tape, x, &mut level.block2, &ids2, d)?;
        }
        let hk = tape.leaf(self.head_kernel.clone());
        let hb = tape.leaf(self.head_bias.clone());
        params.push(hk);
        params.push(hb);
        let logits = tape.conv2d(x, hk, hb, ConvSpec::same(1))?;
        let output = tape.softmax_channels(logits)?;

        Ok(Recorded { output, input: input_id, params })
    }
}

fn push_block<'m>(b: &'m ConvBlock, out: &mut Vec<&'m Tensor>) {
    out.push(&b.retina.standard);
    out.push(&b.retina.dilated);
    out.push(&b.retina.bias);
    out.push(&b.gamma);
    out.push(&b.beta);
}

fn push_block_mut<'m>(b: &'m mut ConvBlock, out: &mut Vec<&'m mut Tensor>) {
    out.push(&mut b.retina.standard);
    out.push(&mut b.retina.dilated);
    out.push(&mut b.retina.bias);
    out.push(&mut b.gamma);
    out.push(&mut b.beta);
}

/// Ids of a recorded forward pass.
pub struct Recorded {
    pub output: ValueId,
    pub input: ValueId,
    /// Parameter leaves in declaration order.
    pub params: Vec<ValueId>,
}

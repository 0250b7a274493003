//! Acceptance gate: ten numbered checks, one test each, covering fused-layer
//! equivalence, gradient correctness, metric oracles, skeleton laws,
//! end-to-end learning, the output simplex, determinism, parameter
//! accounting, and the bench contract. Every test prints one
//! `criterion NN ...: PASS` line (run with `--nocapture` to see them);
//! an assertion failure in test NN is that criterion's FAIL.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use irisnet::checkpoint::load_checkpoint;
use irisnet::commands::{
    cmd_bench, cmd_gen_data, cmd_train, evaluate_sample, CHECKPOINT_NAME, HISTORY_NAME,
};
use irisnet::config::TrainConfig;
use irisnet::eval::{has_2x2_block, iou, msd, skeletonize, soft_iou, BinaryMask};
use irisnet::io::{load_split, Split};
use irisnet::model::{build_model, ArchConfig};
use irisnet::ops::conv::conv2d_backward;
use irisnet::ops::{
    batchnorm_train, conv2d, maxpool2d, transposed_conv2d, BnRunning, ConvSpec, Tape,
};
use irisnet::retina::{
    retina_conv_backward, retina_conv_forward, retina_conv_reference, RetinaConvLayer,
};
use irisnet::rng::seeded_rng;
use irisnet::synth::{AugmentRanges, PhantomParams};
use irisnet::train::{bce_loss, dice_loss, BCE_CLAMP, DICE_SMOOTH};
use irisnet::Tensor;

fn report(n: usize, name: &str, detail: String) {
    println!("criterion {n:02} ({name}): PASS — {detail}");
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("acceptance-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------- 1 & 3 --

struct SweepCase {
    input: Tensor,
    layer: RetinaConvLayer,
}

/// 100 layer configurations drawn from the full small-parameter grid,
/// shared by the forward- and gradient-equivalence checks.
fn sweep_cases() -> Vec<SweepCase> {
    let mut rng = seeded_rng(1001);
    let mut cases = Vec::with_capacity(100);
    for _ in 0..100 {
        let cin = [1, 2, 4][rng.random_range(0..3)];
        let cout = [1, 2, 4][rng.random_range(0..3)];
        let ks = [1, 3, 5][rng.random_range(0..3)];
        let kd = [1, 3, 5][rng.random_range(0..3)];
        let d = rng.random_range(1..=3);
        let h = [8, 16][rng.random_range(0..2)];
        let w = [8, 16][rng.random_range(0..2)];
        let input = rand_tensor(&mut rng, &[2, cin, h, w], -1.0, 1.0);
        let layer = RetinaConvLayer::new(
            rand_tensor(&mut rng, &[cout, cin, ks, ks], -1.0, 1.0),
            rand_tensor(&mut rng, &[cout, cin, kd, kd], -1.0, 1.0),
            d,
            rand_tensor(&mut rng, &[cout], -0.5, 0.5),
        )
        .unwrap();
        cases.push(SweepCase { input, layer });
    }
    cases
}

#[test]
fn criterion_01_fused_matches_two_pass_forward() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for case in sweep_cases() {
        let fused = retina_conv_forward(&case.input, &case.layer).unwrap();
        let two_pass = retina_conv_reference(&case.input, &case.layer).unwrap();
        let magnitude =
            two_pass.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let dev = fused
            .data()
            .iter()
            .zip(two_pass.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let rel = dev / magnitude;
        assert!(rel <= 1e-12, "fused deviates from two-pass by {rel:.3e} relative");
        worst = worst.max(rel);
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 30.0, "sweep took {secs:.1}s, budget 30s");
    report(1, "fused vs two-pass forward", format!("100 configs, worst rel dev {worst:.2e}, {secs:.1}s"));
}

#[test]
fn criterion_03_fused_matches_two_pass_gradients() {
    let mut rng = seeded_rng(1003);
    let mut worst = 0.0f64;
    for case in sweep_cases() {
        let out = retina_conv_forward(&case.input, &case.layer).unwrap();
        let upstream = rand_tensor(&mut rng, out.shape(), -1.0, 1.0);
        let fused = retina_conv_backward(&case.input, &case.layer, &upstream).unwrap();

        // Independent route: differentiate each pass of the two-pass form
        // and combine. The input feeds both passes, so its gradients add.
        let gs =
            conv2d_backward(&case.input, &case.layer.standard, ConvSpec::same(1), &upstream)
                .unwrap();
        let gd = conv2d_backward(
            &case.input,
            &case.layer.dilated,
            ConvSpec::same(case.layer.dilation),
            &upstream,
        )
        .unwrap();
        let input_ref: Vec<f64> =
            gs.input.data().iter().zip(gd.input.data()).map(|(a, b)| a + b).collect();

        let pairs: [(&[f64], &[f64]); 4] = [
            (fused.input.data(), &input_ref),
            (fused.standard.data(), gs.kernel.data()),
            (fused.dilated.data(), gd.kernel.data()),
            (fused.bias.data(), gs.bias.data()),
        ];
        for (got, want) in pairs {
            let dev = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
            assert!(dev <= 1e-10, "gradient routes deviate by {dev:.3e}");
            worst = worst.max(dev);
        }
    }
    report(3, "fused vs two-pass gradients", format!("100 configs, worst abs dev {worst:.2e}"));
}

// -------------------------------------------------------------------- 2 --

struct GradCase {
    leaves: Vec<Tensor>,
    analytic: Vec<Tensor>,
    value: Box<dyn Fn(&[Tensor]) -> f64>,
}

fn perturbed(t: &Tensor, i: usize, delta: f64) -> Tensor {
    let mut v = t.data().to_vec();
    v[i] += delta;
    Tensor::from_vec(t.shape(), v).unwrap()
}

/// Central finite differences against the recorded-tape gradient on every
/// coordinate of every leaf. Returns the worst relative error seen.
fn check_gradients(case: &GradCase, op: &str) -> f64 {
    let mut worst = 0.0f64;
    for (li, leaf) in case.leaves.iter().enumerate() {
        for i in 0..leaf.len() {
            let h = 1e-5 * leaf.data()[i].abs().max(1.0);
            let mut plus = case.leaves.clone();
            plus[li] = perturbed(leaf, i, h);
            let mut minus = case.leaves.clone();
            minus[li] = perturbed(leaf, i, -h);
            let fd = ((case.value)(&plus) - (case.value)(&minus)) / (2.0 * h);
            let an = case.analytic[li].data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(
                rel < 1e-3,
                "{op}: leaf {li} coord {i}: finite difference {fd:.9} vs analytic {an:.9} (rel {rel:.2e})"
            );
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn criterion_02_finite_difference_gradient_checks() {
    let started = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();

    // Plain convolution, undilated and dilated.
    for d in [1usize, 2] {
        let mut rng = seeded_rng(2000 + d as u64);
        let mut w = 0.0f64;
        for _ in 0..20 {
            let (ci, co) = (rng.random_range(1..=2), rng.random_range(1..=2));
            let k = [1, 3][rng.random_range(0..2)];
            let input = rand_tensor(&mut rng, &[2, ci, 5, 5], -1.0, 1.0);
            let kernel = rand_tensor(&mut rng, &[co, ci, k, k], -1.0, 1.0);
            let bias = rand_tensor(&mut rng, &[co], -0.5, 0.5);
            let mut tape = Tape::new();
            let (ii, ki, bi) =
                (tape.leaf(input.clone()), tape.leaf(kernel.clone()), tape.leaf(bias.clone()));
            let out = tape.conv2d(ii, ki, bi, ConvSpec::same(d)).unwrap();
            let u = rand_tensor(&mut rng, tape.value(out).shape(), -1.0, 1.0);
            let mut grads = tape.backward(out, &u).unwrap();
            let case = GradCase {
                leaves: vec![input, kernel, bias],
                analytic: vec![grads.take(ii), grads.take(ki), grads.take(bi)],
                value: Box::new(move |l| {
                    dot(&conv2d(&l[0], &l[1], Some(&l[2]), ConvSpec::same(d)).unwrap(), &u)
                }),
            };
            w = w.max(check_gradients(&case, &format!("conv2d d={d}")));
        }
        worst.push((format!("conv2d d={d}"), w));
    }

    // Transposed convolution, stride 2.
    {
        let mut rng = seeded_rng(2010);
        let mut w = 0.0f64;
        for _ in 0..20 {
            let (ci, co) = (rng.random_range(1..=2), rng.random_range(1..=3));
            let input = rand_tensor(&mut rng, &[2, ci, 3, 3], -1.0, 1.0);
            let kernel = rand_tensor(&mut rng, &[ci, co, 2, 2], -1.0, 1.0);
            let mut tape = Tape::new();
            let (ii, ki) = (tape.leaf(input.clone()), tape.leaf(kernel.clone()));
            let out = tape.transposed_conv2d(ii, ki, 2).unwrap();
            let u = rand_tensor(&mut rng, tape.value(out).shape(), -1.0, 1.0);
            let mut grads = tape.backward(out, &u).unwrap();
            let case = GradCase {
                leaves: vec![input, kernel],
                analytic: vec![grads.take(ii), grads.take(ki)],
                value: Box::new(move |l| dot(&transposed_conv2d(&l[0], &l[1], 2).unwrap(), &u)),
            };
            w = w.max(check_gradients(&case, "transposed_conv2d"));
        }
        worst.push(("transposed_conv2d".into(), w));
    }

    // Max pooling. Inputs are regenerated until every 2x2 window has a
    // clear maximum, so the finite-difference step cannot cross a tie.
    {
        let mut rng = seeded_rng(2020);
        let mut w = 0.0f64;
        for _ in 0..20 {
            let input = loop {
                let t = rand_tensor(&mut rng, &[2, 2, 4, 4], 0.0, 1.0);
                let d = t.data();
                let mut clear = true;
                'windows: for bc in 0..4 {
                    for wy in 0..2 {
                        for wx in 0..2 {
                            let mut vals = [0.0f64; 4];
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    vals[dy * 2 + dx] =
                                        d[bc * 16 + (wy * 2 + dy) * 4 + wx * 2 + dx];
                                }
                            }
                            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                            if vals[3] - vals[2] < 1e-3 {
                                clear = false;
                                break 'windows;
                            }
                        }
                    }
                }
                if clear {
                    break t;
                }
            };
            let mut tape = Tape::new();
            let ii = tape.leaf(input.clone());
            let out = tape.maxpool2d(ii).unwrap();
            let u = rand_tensor(&mut rng, tape.value(out).shape(), -1.0, 1.0);
            let mut grads = tape.backward(out, &u).unwrap();
            let case = GradCase {
                leaves: vec![input],
                analytic: vec![grads.take(ii)],
                value: Box::new(move |l| dot(&maxpool2d(&l[0]).unwrap().output, &u)),
            };
            w = w.max(check_gradients(&case, "maxpool2d"));
        }
        worst.push(("maxpool2d".into(), w));
    }

    // Batch norm in training mode; statistics depend on the input, so the
    // value function recomputes them from scratch each evaluation.
    {
        let mut rng = seeded_rng(2030);
        let mut w = 0.0f64;
        for _ in 0..20 {
            let input = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
            let gamma = rand_tensor(&mut rng, &[2], 0.5, 1.5);
            let beta = rand_tensor(&mut rng, &[2], -0.5, 0.5);
            let mut tape = Tape::new();
            let (ii, gi, bi) =
                (tape.leaf(input.clone()), tape.leaf(gamma.clone()), tape.leaf(beta.clone()));
            let mut running = BnRunning::new(2).unwrap();
            let out = tape.batchnorm_train(ii, gi, bi, &mut running, 1e-5, 0.1).unwrap();
            let u = rand_tensor(&mut rng, tape.value(out).shape(), -1.0, 1.0);
            let mut grads = tape.backward(out, &u).unwrap();
            let case = GradCase {
                leaves: vec![input, gamma, beta],
                analytic: vec![grads.take(ii), grads.take(gi), grads.take(bi)],
                value: Box::new(move |l| {
                    let mut fresh = BnRunning::new(2).unwrap();
                    dot(&batchnorm_train(&l[0], &l[1], &l[2], &mut fresh, 1e-5, 0.1).unwrap().0, &u)
                }),
            };
            w = w.max(check_gradients(&case, "batchnorm_train"));
        }
        worst.push(("batchnorm_train".into(), w));
    }

    // ReLU, inputs bounded away from the kink at zero.
    {
        let mut rng = seeded_rng(2040);
        let mut w = 0.0f64;
        for _ in 0..20 {
            let data: Vec<f64> = (0..2 * 3 * 4 * 4)
                .map(|_| {
                    let m = rng.random_range(0.1..1.0);
                    if rng.random_bool(0.5) {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            let input = Tensor::from_vec(&[2, 3, 4, 4], data).unwrap();
            let mut tape = Tape::new();
            let ii = tape.leaf(input.clone());
            let out = tape.relu(ii).unwrap();
            let u = rand_tensor(&mut rng, tape.value(out).shape(), -1.0, 1.0);
            let mut grads = tape.backward(out, &u).unwrap();
            let case = GradCase {
                leaves: vec![input],
                analytic: vec![grads.take(ii)],
                value: Box::new(move |l| dot(&irisnet::ops::relu(&l[0]).unwrap(), &u)),
            };
            w = w.max(check_gradients(&case, "relu"));
        }
        worst.push(("relu".into(), w));
    }

    // Channel softmax.
    {
        let mut rng = seeded_rng(2050);
        let mut w = 0.0f64;
        for _ in 0..20 {
            let input = rand_tensor(&mut rng, &[2, 3, 2, 2], -2.0, 2.0);
            let mut tape = Tape::new();
            let ii = tape.leaf(input.clone());
            let out = tape.softmax_channels(ii).unwrap();
            let u = rand_tensor(&mut rng, tape.value(out).shape(), -1.0, 1.0);
            let mut grads = tape.backward(out, &u).unwrap();
            let case = GradCase {
                leaves: vec![input],
                analytic: vec![grads.take(ii)],
                value: Box::new(move |l| dot(&irisnet::ops::softmax_channels(&l[0]).unwrap(), &u)),
            };
            w = w.max(check_gradients(&case, "softmax_channels"));
        }
        worst.push(("softmax_channels".into(), w));
    }

    // The fused layer itself.
    {
        let mut rng = seeded_rng(2060);
        let mut w = 0.0f64;
        for _ in 0..20 {
            let (ci, co) = (rng.random_range(1..=2), rng.random_range(1..=2));
            let d = rng.random_range(2..=3);
            let input = rand_tensor(&mut rng, &[1, ci, 6, 6], -1.0, 1.0);
            let g = rand_tensor(&mut rng, &[co, ci, 3, 3], -1.0, 1.0);
            let hk = rand_tensor(&mut rng, &[co, ci, 3, 3], -1.0, 1.0);
            let bias = rand_tensor(&mut rng, &[co], -0.5, 0.5);
            let mut tape = Tape::new();
            let (ii, gi, hi, bi) = (
                tape.leaf(input.clone()),
                tape.leaf(g.clone()),
                tape.leaf(hk.clone()),
                tape.leaf(bias.clone()),
            );
            let out = tape.retina_conv(ii, gi, hi, bi, d).unwrap();
            let u = rand_tensor(&mut rng, tape.value(out).shape(), -1.0, 1.0);
            let mut grads = tape.backward(out, &u).unwrap();
            let case = GradCase {
                leaves: vec![input, g, hk, bias],
                analytic: vec![grads.take(ii), grads.take(gi), grads.take(hi), grads.take(bi)],
                value: Box::new(move |l| {
                    let layer =
                        RetinaConvLayer::new(l[1].clone(), l[2].clone(), d, l[3].clone()).unwrap();
                    dot(&retina_conv_forward(&l[0], &layer).unwrap(), &u)
                }),
            };
            w = w.max(check_gradients(&case, "retina_conv"));
        }
        worst.push(("retina_conv".into(), w));
    }

    // Both losses, prediction values bounded away from the clamp edges.
    for loss_name in ["dice_loss", "bce_loss"] {
        let mut rng = seeded_rng(if loss_name == "dice_loss" { 2070 } else { 2080 });
        let mut w = 0.0f64;
        for _ in 0..20 {
            let pred = rand_tensor(&mut rng, &[1, 2, 3, 3], 0.05, 0.95);
            let fg: Vec<f64> = (0..9).map(|_| f64::from(rng.random_bool(0.5))).collect();
            let mut target_data: Vec<f64> = fg.iter().map(|v| 1.0 - v).collect();
            target_data.extend_from_slice(&fg);
            let target = Tensor::from_vec(&[1, 2, 3, 3], target_data).unwrap();
            let mut tape = Tape::new();
            let pi = tape.leaf(pred.clone());
            let out = if loss_name == "dice_loss" {
                tape.dice_loss(pi, &target, DICE_SMOOTH).unwrap()
            } else {
                tape.bce_loss(pi, &target, BCE_CLAMP).unwrap()
            };
            let one = Tensor::from_vec(&[1], vec![1.0]).unwrap();
            let mut grads = tape.backward(out, &one).unwrap();
            let t2 = target.clone();
            let value: Box<dyn Fn(&[Tensor]) -> f64> = if loss_name == "dice_loss" {
                Box::new(move |l| dice_loss(&l[0], &t2, DICE_SMOOTH).unwrap())
            } else {
                Box::new(move |l| bce_loss(&l[0], &t2, BCE_CLAMP).unwrap())
            };
            let case = GradCase { leaves: vec![pred], analytic: vec![grads.take(pi)], value };
            w = w.max(check_gradients(&case, loss_name));
        }
        worst.push((loss_name.into(), w));
    }

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 300.0, "gradient checks took {secs:.1}s, budget 5 min");
    let summary: Vec<String> =
        worst.iter().map(|(op, w)| format!("{op} {w:.1e}")).collect();
    report(2, "finite-difference gradients", format!("20 instances each; worst rel err: {}; {secs:.1}s", summary.join(", ")));
}

// -------------------------------------------------------------------- 4 --

fn mask_from_bits(bits: u32, h: usize, w: usize) -> BinaryMask {
    let mut m = BinaryMask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            m.set(y, x, bits >> (y * w + x) & 1 == 1);
        }
    }
    m
}

fn brute_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (h, w) = a.dims();
    let (mut inter, mut union) = (0u32, 0u32);
    for y in 0..h {
        for x in 0..w {
            inter += (a.get(y, x) && b.get(y, x)) as u32;
            union += (a.get(y, x) || b.get(y, x)) as u32;
        }
    }
    if union == 0 {
        1.0 // both-empty convention: nothing missing, nothing spurious
    } else {
        f64::from(inter) / f64::from(union)
    }
}

fn brute_soft_iou(p: &[f64], t: &BinaryMask) -> f64 {
    let (h, w) = t.dims();
    let (mut num, mut den) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let tv = f64::from(t.get(y, x) as u8);
            num += p[y * w + x].min(tv);
            den += p[y * w + x].max(tv);
        }
    }
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

fn brute_dice_loss(pred_fg: &[f64], target_fg: &[f64], smooth: f64) -> f64 {
    let (mut inter, mut ps, mut ts) = (0.0, 0.0, 0.0);
    for (p, t) in pred_fg.iter().zip(target_fg) {
        inter += p * t;
        ps += p;
        ts += t;
    }
    1.0 - (2.0 * inter + smooth) / (ps + ts + smooth)
}

fn brute_msd(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let nearest = |p: (f64, f64), set: &[(f64, f64)]| {
        set.iter()
            .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let total: f64 = a.iter().map(|&p| nearest(p, b)).sum::<f64>()
        + b.iter().map(|&q| nearest(q, a)).sum::<f64>();
    total / (a.len() + b.len()) as f64
}

/// A mask's foreground plane as row-major probabilities.
fn mask_plane(m: &BinaryMask) -> Vec<f64> {
    let (h, w) = m.dims();
    (0..h * w).map(|i| f64::from(m.get(i / w, i % w) as u8)).collect()
}

fn two_channel(fg: &[f64], h: usize, w: usize) -> Tensor {
    let mut data: Vec<f64> = fg.iter().map(|v| 1.0 - v).collect();
    data.extend_from_slice(fg);
    Tensor::from_vec(&[1, 2, h, w], data).unwrap()
}

#[test]
fn criterion_04_metrics_match_brute_force() {
    // Exhaustive: every pair of 3x3 binary masks.
    let masks: Vec<BinaryMask> = (0..512).map(|bits| mask_from_bits(bits, 3, 3)).collect();
    let points: Vec<Vec<(f64, f64)>> = masks
        .iter()
        .map(|m| m.ones().map(|(y, x)| (y as f64, x as f64)).collect())
        .collect();
    let planes: Vec<Vec<f64>> = masks.iter().map(mask_plane).collect();
    let mut pairs = 0usize;
    for (i, a) in masks.iter().enumerate() {
        let prob = Tensor::from_vec(&[3, 3], planes[i].clone()).unwrap();
        let pred = two_channel(&planes[i], 3, 3);
        for (j, b) in masks.iter().enumerate() {
            assert_eq!(iou(a, b).unwrap(), brute_iou(a, b), "iou mask pair {i},{j}");
            assert_eq!(
                soft_iou(&prob, b).unwrap(),
                brute_soft_iou(&planes[i], b),
                "soft_iou mask pair {i},{j}"
            );
            let target = two_channel(&planes[j], 3, 3);
            assert_eq!(
                dice_loss(&pred, &target, DICE_SMOOTH).unwrap(),
                brute_dice_loss(&planes[i], &planes[j], DICE_SMOOTH),
                "dice mask pair {i},{j}"
            );
            if !points[i].is_empty() && !points[j].is_empty() {
                assert_eq!(
                    msd(&points[i], &points[j]).unwrap(),
                    brute_msd(&points[i], &points[j]),
                    "msd mask pair {i},{j}"
                );
            }
            pairs += 1;
        }
    }

    // Randomized: 50 instances of 8x8 probabilities against random masks.
    let mut rng = seeded_rng(1004);
    for inst in 0..50 {
        let prob_data: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let prob = Tensor::from_vec(&[8, 8], prob_data.clone()).unwrap();
        let mut a = BinaryMask::new(8, 8);
        let mut b = BinaryMask::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                a.set(y, x, rng.random_bool(0.4));
                b.set(y, x, rng.random_bool(0.4));
            }
        }
        assert_eq!(iou(&a, &b).unwrap(), brute_iou(&a, &b), "iou instance {inst}");
        assert_eq!(
            soft_iou(&prob, &b).unwrap(),
            brute_soft_iou(&prob_data, &b),
            "soft_iou instance {inst}"
        );
        let pb = mask_plane(&b);
        assert_eq!(
            dice_loss(&two_channel(&prob_data, 8, 8), &two_channel(&pb, 8, 8), DICE_SMOOTH)
                .unwrap(),
            brute_dice_loss(&prob_data, &pb, DICE_SMOOTH),
            "dice instance {inst}"
        );
        let (qa, qb): (Vec<(f64, f64)>, Vec<(f64, f64)>) = (
            a.ones().map(|(y, x)| (y as f64, x as f64)).collect(),
            b.ones().map(|(y, x)| (y as f64, x as f64)).collect(),
        );
        if !qa.is_empty() && !qb.is_empty() {
            assert_eq!(msd(&qa, &qb).unwrap(), brute_msd(&qa, &qb), "msd instance {inst}");
        }
    }
    report(4, "metric brute-force oracles", format!("{pairs} exhaustive 3x3 pairs + 50 random 8x8 instances, all exact"));
}

// -------------------------------------------------------------------- 5 --

#[test]
fn criterion_05_skeleton_laws_on_random_blobs() {
    let mut rng = seeded_rng(1005);
    for blob in 0..200 {
        let mut mask = BinaryMask::new(24, 24);
        for _ in 0..rng.random_range(2..=4) {
            let cy = rng.random_range(4..20) as isize;
            let cx = rng.random_range(4..20) as isize;
            let r = rng.random_range(2..=5) as isize;
            for y in (cy - r).max(0)..(cy + r + 1).min(24) {
                for x in (cx - r).max(0)..(cx + r + 1).min(24) {
                    if (y - cy).pow(2) + (x - cx).pow(2) <= r * r {
                        mask.set(y as usize, x as usize, true);
                    }
                }
            }
        }
        let skeleton = skeletonize(&mask);
        assert!(skeleton.subset_of(&mask), "blob {blob}: skeleton escapes its mask");
        assert_eq!(skeletonize(&skeleton), skeleton, "blob {blob}: not idempotent");
        assert!(!has_2x2_block(&skeleton), "blob {blob}: 2x2 block survives");
    }
    report(5, "skeleton laws", "200 random blobs: subset, idempotent, no 2x2 block".into());
}

// -------------------------------------------------------------------- 6 --

#[test]
fn criterion_06_end_to_end_learning() {
    let started = Instant::now();
    let config = TrainConfig {
        arch: ArchConfig {
            depth: 3,
            base_filters: 8,
            input_size: 64,
            dilation_schedule: vec![1, 2, 2, 2, 2, 2, 1],
            ..ArchConfig::default()
        },
        epochs: 15,
        batch_size: 8,
        augment: AugmentRanges {
            flip_probability: 0.5,
            max_rotation_deg: 10.0,
            max_shift_px: 6.0,
            zoom_min: 0.95,
            zoom_max: 1.05,
        },
        phantom: PhantomParams { height: 64, width: 64, ..PhantomParams::default() },
        seed: 42,
        ..TrainConfig::default()
    };
    let data = tmp_dir("e2e-data");
    let manifest = cmd_gen_data(&config, 200, &data).unwrap();
    assert_eq!(manifest.split_sizes(), (160, 20, 20));

    let out = tmp_dir("e2e-run");
    let summary = cmd_train(&config, &data, &out).unwrap();

    // Learning: best validation Dice loss at most half the first epoch's.
    let history = fs::read_to_string(out.join(HISTORY_NAME)).unwrap();
    let epoch1_val_dice: f64 =
        history.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert!(
        summary.best_val_dice <= 0.5 * epoch1_val_dice,
        "best val dice {:.4} vs epoch-1 {epoch1_val_dice:.4}: not halved",
        summary.best_val_dice
    );

    // Segmentation quality at the production threshold, on the best model.
    let model = load_checkpoint(&out.join(CHECKPOINT_NAME)).unwrap();
    let score_split = |split: Split| -> (f64, Vec<f64>) {
        let samples = load_split(&data, &manifest, split).unwrap();
        let mut ious = Vec::new();
        let mut msds = Vec::new();
        for (entry, s) in manifest.of_split(split).zip(&samples) {
            let input = Tensor::from_vec(&[1, 1, 64, 64], s.image.data().to_vec()).unwrap();
            let output = model.forward_eval(&input).unwrap();
            let fg = Tensor::from_vec(&[64, 64], output.data()[4096..8192].to_vec()).unwrap();
            let row = evaluate_sample(&entry.id, &fg, s, 0.1, 0.15).unwrap();
            ious.push(row.iou_at_tau);
            if let Some((px, _)) = row.msd {
                msds.push(px);
            }
        }
        (ious.iter().sum::<f64>() / ious.len() as f64, msds)
    };

    let (val_iou, _) = score_split(Split::Validation);
    assert!(val_iou >= 0.70, "validation IOU at 0.1 is {val_iou:.4}, need 0.70");

    let (_, test_msds) = score_split(Split::Test);
    assert_eq!(test_msds.len(), 20, "every test sample must yield a contour");
    let test_msd = test_msds.iter().sum::<f64>() / test_msds.len() as f64;
    assert!(test_msd <= 3.0, "test MSD {test_msd:.3}px exceeds 3.0px");

    let secs = started.elapsed().as_secs_f64();
    assert!(secs <= 600.0, "end-to-end run took {secs:.0}s, budget 10 min");
    report(6, "end-to-end learning", format!(
        "dice {:.4} -> {:.4} (ratio {:.2}), val IOU {val_iou:.3}, test MSD {test_msd:.2}px, {secs:.0}s",
        epoch1_val_dice, summary.best_val_dice, summary.best_val_dice / epoch1_val_dice
    ));
}

// -------------------------------------------------------------------- 7 --

#[test]
fn criterion_07_output_channels_form_a_simplex() {
    let mut worst = 0.0f64;
    for depth in 1..=4usize {
        let mut schedule = vec![2; 2 * depth + 1];
        schedule[0] = 1;
        schedule[2 * depth] = 1;
        let config = ArchConfig {
            depth,
            base_filters: 4,
            input_size: 32,
            dilation_schedule: schedule,
            ..ArchConfig::default()
        };
        let mut model = build_model(&config, depth as u64).unwrap();
        let mut rng = seeded_rng(1007 + depth as u64);
        for _ in 0..10 {
            let batch = rand_tensor(&mut rng, &[2, 1, 32, 32], 0.0, 1.0);
            let out = model.forward_train_unrecorded(&batch).unwrap();
            let plane = 32 * 32;
            let data = out.data();
            for b in 0..2 {
                for p in 0..plane {
                    let sum = data[b * 2 * plane + p] + data[b * 2 * plane + plane + p];
                    let dev = (sum - 1.0).abs();
                    assert!(dev <= 1e-12, "depth {depth}: channel sum {sum} off by {dev:.2e}");
                    worst = worst.max(dev);
                }
            }
        }
    }
    report(7, "output simplex", format!("depths 1-4, 10 batches each, worst |sum-1| {worst:.2e}"));
}

// -------------------------------------------------------------------- 8 --

#[test]
fn criterion_08_training_is_byte_deterministic() {
    let config = TrainConfig {
        arch: ArchConfig {
            depth: 2,
            base_filters: 4,
            input_size: 32,
            dilation_schedule: vec![1, 2, 2, 2, 1],
            ..ArchConfig::default()
        },
        epochs: 3,
        batch_size: 4,
        phantom: PhantomParams { height: 32, width: 32, ..PhantomParams::default() },
        seed: 77,
        ..TrainConfig::default()
    };
    let data = tmp_dir("det-data");
    cmd_gen_data(&config, 12, &data).unwrap();
    let (out_a, out_b) = (tmp_dir("det-a"), tmp_dir("det-b"));
    cmd_train(&config, &data, &out_a).unwrap();
    cmd_train(&config, &data, &out_b).unwrap();

    let history_a = fs::read(out_a.join(HISTORY_NAME)).unwrap();
    let history_b = fs::read(out_b.join(HISTORY_NAME)).unwrap();
    assert_eq!(history_a, history_b, "history CSVs differ between identical runs");
    let ckpt_a = fs::read(out_a.join(CHECKPOINT_NAME)).unwrap();
    let ckpt_b = fs::read(out_b.join(CHECKPOINT_NAME)).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between identical runs");
    report(8, "training determinism", format!(
        "two runs: history {} bytes identical, checkpoint {} bytes identical",
        history_a.len(),
        ckpt_a.len()
    ));
}

// -------------------------------------------------------------------- 9 --

#[test]
fn criterion_09_parameter_accounting() {
    // Unit case: 1 input channel, 4 output channels, both kernels 3x3.
    let layer = RetinaConvLayer::new(
        Tensor::zeros(&[4, 1, 3, 3]).unwrap(),
        Tensor::zeros(&[4, 1, 3, 3]).unwrap(),
        2,
        Tensor::zeros(&[4]).unwrap(),
    )
    .unwrap();
    assert_eq!(layer.count_params(), 4 * 1 * (9 + 9) + 4);
    assert_eq!(layer.count_params(), 76);

    // Depth-1 model, 4 base filters, hand-summed term by term.
    let fused = |ci: usize, co: usize| co * ci * (9 + 9) + co; // two 3x3 kernels + bias
    let bn = |c: usize| 2 * c; // gamma + beta
    let b = 4usize;
    let encoder = fused(1, b) + bn(b) + fused(b, b) + bn(b);
    let bottleneck = fused(b, 2 * b) + bn(2 * b) + fused(2 * b, 2 * b) + bn(2 * b);
    let upsample = (2 * b) * b * 2 * 2; // transposed 2x2 kernel, no bias
    let decoder = upsample + fused(2 * b, b) + bn(b) + fused(b, b) + bn(b);
    let head = 2 * b * 1 * 1 + 2; // 1x1 conv to two classes + bias
    let expected = encoder + bottleneck + decoder + head;

    let config = ArchConfig {
        depth: 1,
        base_filters: b,
        input_size: 16,
        dilation_schedule: vec![1, 2, 1],
        ..ArchConfig::default()
    };
    let model = build_model(&config, 9).unwrap();
    assert_eq!(model.count_parameters(), expected);
    report(9, "parameter accounting", format!(
        "RetinaConv unit case 76; depth-1 model {expected} (hand sum) == count_parameters"
    ));
}

// ------------------------------------------------------------------- 10 --

#[test]
fn criterion_10_bench_contract() {
    let config = TrainConfig {
        arch: ArchConfig {
            depth: 2,
            base_filters: 4,
            input_size: 32,
            dilation_schedule: vec![1, 2, 2, 2, 1],
            ..ArchConfig::default()
        },
        phantom: PhantomParams { height: 32, width: 32, ..PhantomParams::default() },
        seed: 10,
        ..TrainConfig::default()
    };
    let out = tmp_dir("bench");
    let report_struct = cmd_bench(&config, 10, &out).unwrap();
    assert_eq!(report_struct.fps_fused.len(), 10, "ten timed runs on the fused path");
    assert_eq!(report_struct.fps_reference.len(), 10, "ten timed runs on the reference path");

    let text = fs::read_to_string(out.join("bench.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    for field in
        ["fps_fused_mean", "fps_fused_std", "fps_reference_mean", "fps_reference_std"]
    {
        let v = json[field].as_f64().unwrap_or_else(|| panic!("{field} missing or not a number"));
        assert!(v.is_finite() && v >= 0.0, "{field} = {v}");
    }
    let params = json["params"].as_u64().expect("params missing") as usize;
    let model = build_model(&config.arch, config.seed).unwrap();
    assert_eq!(params, model.count_parameters(), "params field disagrees with the model");
    report(10, "bench contract", format!(
        "runs=10, fused {:.1} fps, reference {:.1} fps, params {params}",
        report_struct.fps_fused_mean, report_struct.fps_reference_mean
    ));
}

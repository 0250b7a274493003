//! The five commands behind the CLI, as library functions.
//!
//! Each writes its artifacts under an output directory and re-reads them
//! before returning, so `Ok` means every declared output exists and parses.
//! File outputs are byte-deterministic for a fixed config and seed, except
//! the measured timings in `summary.json` and `bench.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, load_checkpoint_expecting};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{
    binarize, iou, mask_to_contour, msd, px_to_mm, skeletonize, soft_iou, BinaryMask,
};
use crate::io::{
    load_split, read_contour_csv, read_manifest, read_mask_pgm, read_pgm, save_sample,
    write_contour_csv, write_history_csv, write_manifest, write_metrics_csv, Manifest,
    MetricsRow, Split,
};
use crate::io::pgm::{read_image_pgm, write_image_pgm, write_mask_pgm};
use crate::model::{build_model, ConvRoute, Model};
use crate::rng::{derive_seed, stream};
use crate::synth::{generate_phantom, split_dataset, PhantomParams, SegmentationSample};
use crate::tensor::Tensor;
use crate::train::train;

pub const CHECKPOINT_NAME: &str = "best.ckpt";
pub const HISTORY_NAME: &str = "history.csv";
pub const SUMMARY_NAME: &str = "summary.json";
pub const METRICS_NAME: &str = "metrics.csv";
pub const BENCH_NAME: &str = "bench.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Generates `count` seeded phantoms into `out`, assigns splits by the
/// config ratios, and writes the manifest. Per-sample generator seeds are
/// derived from the master seed and the sample index, so any one sample can
/// be regenerated in isolation.
pub fn cmd_gen_data(config: &TrainConfig, count: usize, out: &Path) -> Result<Manifest> {
    config.validate()?;
    ensure_dir(out)?;

    let (train_idx, val_idx, test_idx) =
        split_dataset((0..count).collect(), config.split_ratios, config.seed)?;
    let mut split_of = vec![Split::Train; count];
    for &i in &val_idx {
        split_of[i] = Split::Validation;
    }
    for &i in &test_idx {
        split_of[i] = Split::Test;
    }
    drop(train_idx);

    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let params = PhantomParams {
            seed: derive_seed(config.seed, stream::PHANTOM, i as u64),
            ..config.phantom.clone()
        };
        let sample = generate_phantom(&params)?;
        let id = format!("sample_{i:04}");
        entries.push(save_sample(out, &id, split_of[i], &sample, &params)?);
    }
    let manifest = Manifest { seed: config.seed, ratios: config.split_ratios, entries };
    write_manifest(out, &manifest)?;

    // Read-back validation: the manifest must reparse to the same value and
    // every sample must pass the full load checks.
    let reread = read_manifest(out)?;
    if reread != manifest {
        return Err(Error::Manifest {
            path: out.join(crate::io::MANIFEST_NAME),
            detail: "reread manifest differs from the one just written".into(),
        });
    }
    for entry in &manifest.entries {
        crate::io::load_sample(out, entry)?;
    }
    Ok(manifest)
}

/// Everything `cmd_train` knows at the end of a run. Written to
/// `summary.json`; `wall_seconds` is the one non-reproducible field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub param_count: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub final_train_dice: f64,
    pub final_train_bce: f64,
    pub final_val_dice: f64,
    pub final_val_bce: f64,
    pub wall_seconds: f64,
}

/// Trains on the manifest's train split, validating on its validation
/// split. Writes `best.ckpt`, `history.csv`, and `summary.json` under `out`.
pub fn cmd_train(config: &TrainConfig, data: &Path, out: &Path) -> Result<RunSummary> {
    config.validate()?;
    ensure_dir(out)?;
    let started = Instant::now();

    let manifest = read_manifest(data)?;
    let train_set = load_split(data, &manifest, Split::Train)?;
    let val_set = load_split(data, &manifest, Split::Validation)?;

    let mut model = build_model(&config.arch, config.seed)?;
    let ckpt_path = out.join(CHECKPOINT_NAME);
    let outcome = train(&mut model, &train_set, &val_set, config, &ckpt_path)?;
    write_history_csv(&out.join(HISTORY_NAME), &outcome.history)?;

    let last = outcome.history.records().last().expect("epochs >= 1");
    let summary = RunSummary {
        config: config.clone(),
        param_count: model.count_parameters(),
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_dice: outcome.best_val_dice,
        final_train_dice: last.train_dice,
        final_train_bce: last.train_bce,
        final_val_dice: last.val_dice,
        final_val_bce: last.val_bce,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let summary_path = out.join(SUMMARY_NAME);
    let mut json = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(&summary_path, e))?;
    json.push('\n');
    fs::write(&summary_path, json).map_err(|e| Error::io(&summary_path, e))?;

    // Read-back validation: checkpoint must load against this architecture
    // and carry the advertised parameter count; the summary must reparse.
    let loaded = load_checkpoint_expecting(&ckpt_path, &config.arch)?;
    if loaded.count_parameters() != summary.param_count {
        return Err(Error::Msg(format!(
            "checkpoint has {} parameters, summary says {}",
            loaded.count_parameters(),
            summary.param_count
        )));
    }
    let text = fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let _: RunSummary = serde_json::from_str(&text).map_err(|e| Error::json(&summary_path, e))?;
    Ok(summary)
}

/// Foreground probability plane (channel 1) for one image.
fn predict_fg(model: &Model, image: &Tensor) -> Result<Tensor> {
    let (h, w) = image.dims2()?;
    let s = model.config.input_size;
    if (h, w) != (s, s) {
        return Err(Error::Msg(format!(
            "input image is {h}x{w}, model requires {s}x{s}"
        )));
    }
    let input = Tensor::from_vec(&[1, 1, h, w], image.data().to_vec())?;
    let output = model.forward_eval(&input)?;
    let plane = h * w;
    Tensor::from_vec(&[h, w], output.data()[plane..2 * plane].to_vec())
}

/// The four artifact paths `cmd_infer` writes for an input stem.
pub fn infer_artifacts(out: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        out.join(format!("{stem}_prob.pgm")),
        out.join(format!("{stem}_mask.pgm")),
        out.join(format!("{stem}_skeleton.pgm")),
        out.join(format!("{stem}_contour.csv")),
    )
}

/// Segments one image or every plain `.pgm` in a directory (files named
/// `*_mask`, `*_prob`, or `*_skeleton` are skipped as derived artifacts).
/// Per input stem writes the probability map, the thresholded mask, its
/// skeleton, and the extracted contour.
pub fn cmd_infer(checkpoint: &Path, input: &Path, out: &Path, threshold: f64) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    ensure_dir(out)?;

    let mut inputs: Vec<PathBuf> = if input.is_dir() {
        let mut v = Vec::new();
        for entry in fs::read_dir(input).map_err(|e| Error::io(input, e))? {
            let path = entry.map_err(|e| Error::io(input, e))?.path();
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            let derived =
                ["_mask", "_prob", "_skeleton"].iter().any(|suffix| stem.ends_with(suffix));
            if path.extension().is_some_and(|e| e == "pgm") && !derived {
                v.push(path);
            }
        }
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if inputs.is_empty() {
        return Err(Error::Msg(format!("no .pgm images found under {}", input.display())));
    }
    inputs.dedup();

    for path in &inputs {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Msg(format!("unusable file name {}", path.display())))?;
        let image = read_image_pgm(path)?;
        let prob = predict_fg(&model, &image)?;
        let mask = binarize(&prob, threshold)?;
        let skeleton = skeletonize(&mask);
        let contour = mask_to_contour(&skeleton).map_err(|e| {
            Error::Msg(format!("no contour extractable from {}: {e}", path.display()))
        })?;

        let (prob_path, mask_path, skel_path, contour_path) = infer_artifacts(out, stem);
        write_image_pgm(&prob_path, &prob)?;
        write_mask_pgm(&mask_path, &mask)?;
        write_mask_pgm(&skel_path, &skeleton)?;
        write_contour_csv(&contour_path, &contour)?;

        // Read-back validation of all four artifacts.
        read_pgm(&prob_path)?;
        read_mask_pgm(&mask_path)?;
        read_mask_pgm(&skel_path)?;
        read_contour_csv(&contour_path)?;
    }
    Ok(())
}

/// Scores one prediction against its ground truth. The contour route is
/// threshold -> skeleton -> column scan; if the prediction yields no usable
/// contour the distances are absent and the row is flagged downstream.
pub fn evaluate_sample(
    id: &str,
    prob_fg: &Tensor,
    truth: &SegmentationSample,
    threshold: f64,
    mm_per_px: f64,
) -> Result<MetricsRow> {
    let gt_fg: BinaryMask = truth.fg_mask();
    let soft = soft_iou(prob_fg, &gt_fg)?;
    let mask = binarize(prob_fg, threshold)?;
    let hard = iou(&mask, &gt_fg)?;
    let distances = match mask_to_contour(&skeletonize(&mask)) {
        Ok(contour) => {
            let px = msd(&contour.to_f64(), &truth.centerline.to_f64())?;
            Some((px, px_to_mm(px, mm_per_px)))
        }
        Err(Error::NoContour | Error::DegenerateContour { .. }) => None,
        Err(other) => return Err(other),
    };
    Ok(MetricsRow { id: id.to_string(), soft_iou: soft, iou_at_tau: hard, msd: distances })
}

/// Evaluates the checkpoint on one split of the dataset and writes
/// `metrics.csv` (per-sample rows plus the aggregate).
pub fn cmd_eval(
    config: &TrainConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    split: Split,
) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let model = load_checkpoint(checkpoint)?;
    ensure_dir(out)?;

    let manifest = read_manifest(data)?;
    let samples = load_split(data, &manifest, split)?;
    if samples.is_empty() {
        return Err(Error::DatasetTooSmall { got: 0, min: 1 });
    }

    let mut rows = Vec::with_capacity(samples.len());
    for (entry, sample) in manifest.of_split(split).zip(&samples) {
        let prob = predict_fg(&model, &sample.image)?;
        rows.push(evaluate_sample(&entry.id, &prob, sample, config.threshold, config.mm_per_px)?);
    }

    let metrics_path = out.join(METRICS_NAME);
    write_metrics_csv(&metrics_path, &rows)?;
    let text = fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let lines = text.lines().count();
    if lines != rows.len() + 2 {
        return Err(Error::Csv {
            path: metrics_path,
            detail: format!("expected {} lines, wrote {lines}", rows.len() + 2),
        });
    }
    Ok(rows)
}

/// Single-image forward throughput for both convolution routes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub params: usize,
    pub runs: usize,
    /// Frames per second, one entry per timed run.
    pub fps_fused: Vec<f64>,
    pub fps_reference: Vec<f64>,
    pub fps_fused_mean: f64,
    pub fps_fused_std: f64,
    pub fps_reference_mean: f64,
    pub fps_reference_std: f64,
    /// Largest |fused - two-pass| over the output map; the routes must agree.
    pub max_route_deviation: f64,
}

/// Builds the configured model, primes its normalization statistics, and
/// times `runs` single-image forward passes per route. Speed is report-only;
/// route agreement is enforced.
pub fn cmd_bench(config: &TrainConfig, runs: usize, out: &Path) -> Result<BenchReport> {
    config.validate()?;
    if runs == 0 {
        return Err(Error::ZeroParam { what: "bench runs", got: 0 });
    }
    ensure_dir(out)?;

    let mut model = build_model(&config.arch, config.seed)?;
    let phantom = generate_phantom(&config.phantom)?;
    let s = config.arch.input_size;
    let input = Tensor::from_vec(&[1, 1, s, s], phantom.image.data().to_vec())?;
    // One training-mode pass populates the running statistics eval needs.
    model.forward_train_unrecorded(&input)?;

    let out_fused = model.forward_eval_with(&input, ConvRoute::Fused)?;
    let out_ref = model.forward_eval_with(&input, ConvRoute::TwoPass)?;
    let max_route_deviation = out_fused
        .data()
        .iter()
        .zip(out_ref.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if max_route_deviation > 1e-12 {
        return Err(Error::Msg(format!(
            "convolution routes disagree by {max_route_deviation:.3e}"
        )));
    }

    let time_route = |route: ConvRoute| -> Result<Vec<f64>> {
        for _ in 0..2 {
            model.forward_eval_with(&input, route)?; // warm-up
        }
        let mut fps = Vec::with_capacity(runs);
        for _ in 0..runs {
            let t = Instant::now();
            model.forward_eval_with(&input, route)?;
            fps.push(1.0 / t.elapsed().as_secs_f64());
        }
        Ok(fps)
    };
    let fps_fused = time_route(ConvRoute::Fused)?;
    let fps_reference = time_route(ConvRoute::TwoPass)?;

    let (fused_mean, fused_std) = mean_std(&fps_fused);
    let (ref_mean, ref_std) = mean_std(&fps_reference);
    let report = BenchReport {
        params: model.count_parameters(),
        runs,
        fps_fused,
        fps_reference,
        fps_fused_mean: fused_mean,
        fps_fused_std: fused_std,
        fps_reference_mean: ref_mean,
        fps_reference_std: ref_std,
        max_route_deviation,
    };
    let path = out.join(BENCH_NAME);
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| Error::json(&path, e))?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let _: BenchReport = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    Ok(report)
}

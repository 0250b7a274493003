//! CSV writers for training history, evaluation metrics, and contours.
//!
//! All files carry a header row. Numeric cells use fixed six-decimal
//! formatting so equal values always produce equal bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::Contour;
use crate::train::TrainHistory;

fn csv_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Csv { path: path.to_path_buf(), detail: detail.into() }
}

/// Columns: epoch, train_dice, train_bce, val_dice, val_bce, seconds, saved.
///
/// The seconds column is pinned to 0.000: wall time differs between runs,
/// and the history file contract is byte-for-byte reproducibility at a fixed
/// seed. Real timings are reported in the run summary instead.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = String::from("epoch,train_dice,train_bce,val_dice,val_bce,seconds,saved\n");
    for r in history.records() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},0.000,{}\n",
            r.epoch, r.train_dice, r.train_bce, r.val_dice, r.val_bce, r.saved as u8
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One evaluated sample. `msd` is None when no contour could be extracted
/// from the prediction; such samples are flagged and left out of aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub soft_iou: f64,
    pub iou_at_tau: f64,
    /// (pixels, millimetres).
    pub msd: Option<(f64, f64)>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Columns: sample_id, soft_iou, iou_at_tau, msd_px, msd_mm, status; one row
/// per sample plus a final `aggregate` row holding mean±std per metric
/// (population std) over the non-failed samples.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut out = String::from("sample_id,soft_iou,iou_at_tau,msd_px,msd_mm,status\n");
    let mut cols: [Vec<f64>; 4] = Default::default();
    let mut failed = 0usize;
    for r in rows {
        match r.msd {
            Some((px, mm)) => {
                out.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6},ok\n",
                    r.id, r.soft_iou, r.iou_at_tau, px, mm
                ));
                for (col, v) in cols.iter_mut().zip([r.soft_iou, r.iou_at_tau, px, mm]) {
                    col.push(v);
                }
            }
            None => {
                failed += 1;
                out.push_str(&format!(
                    "{},{:.6},{:.6},,,contour_failed\n",
                    r.id, r.soft_iou, r.iou_at_tau
                ));
            }
        }
    }
    out.push_str("aggregate");
    for col in &cols {
        if col.is_empty() {
            out.push(',');
        } else {
            let (m, s) = mean_std(col);
            out.push_str(&format!(",{m:.6}±{s:.6}"));
        }
    }
    out.push_str(&format!(",n={};failed={}\n", rows.len() - failed, failed));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Columns: row, col; one point per line in contour order.
pub fn write_contour_csv(path: &Path, contour: &Contour) -> Result<()> {
    let mut out = String::from("row,col\n");
    for &(r, c) in contour.points() {
        out.push_str(&format!("{r},{c}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_contour_csv`]; the reloaded points re-run the full
/// contour validity checks.
pub fn read_contour_csv(path: &Path) -> Result<Contour> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("row,col") => {}
        other => return Err(csv_err(path, format!("expected header \"row,col\", got {other:?}"))),
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let parse = || -> Option<(usize, usize)> {
            let (r, c) = line.split_once(',')?;
            Some((r.trim().parse().ok()?, c.trim().parse().ok()?))
        };
        let p = parse().ok_or_else(|| csv_err(path, format!("bad point on line {}: {line:?}", i + 2)))?;
        points.push(p);
    }
    Contour::new(points)
}

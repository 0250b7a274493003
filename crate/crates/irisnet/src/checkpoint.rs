//! Checkpoint files: a binary snapshot of a model that restores bit-exactly.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic   8 bytes  "IRISNET\0"
//! version u32      currently 1
//! hlen    u32      header byte count
//! header  hlen     UTF-8 JSON: architecture + init-scheme name
//! params  8*N      every learnable tensor, declaration order, f64 each
//! bnstats          per batch-norm layer, declaration order:
//!                  mean (C f64), var (C f64), initialized (u8 0/1)
//! checksum u64     FNV-1a 64 over every preceding byte
//! ```
//!
//! The checksum is verified before any payload is interpreted, so a flipped
//! bit anywhere reports `Checksum`, never a confusing downstream error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointProblem, Error, Result};
use crate::model::{build_model, ArchConfig, Model, INIT_SCHEME};

const MAGIC: &[u8; 8] = b"IRISNET\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    init: String,
    param_count: usize,
}

/// FNV-1a, 64-bit.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let header = Header {
        arch: model.config.clone(),
        init: INIT_SCHEME.to_string(),
        param_count: model.count_parameters(),
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for t in model.param_tensors() {
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for r in model.bn_running() {
        for &v in r.mean.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in r.var.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(r.initialized as u8);
    }
    let sum = fnv1a(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, reading: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.problem(CheckpointProblem::Truncated { reading }));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64(&mut self, reading: &'static str) -> Result<f64> {
        let b = self.take(8, reading)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn problem(&self, problem: CheckpointProblem) -> Error {
        Error::Checkpoint { path: self.path.to_path_buf(), problem }
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path };

    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(r.problem(CheckpointProblem::BadMagic));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(r.problem(CheckpointProblem::Version { expected: VERSION, got: version }));
    }
    let hlen = u32::from_le_bytes(r.take(4, "header length")?.try_into().unwrap()) as usize;
    let header_bytes = r.take(hlen, "header")?;

    if bytes.len() < r.pos + 8 {
        return Err(r.problem(CheckpointProblem::Truncated { reading: "checksum" }));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = fnv1a(body);
    if stored != computed {
        return Err(r.problem(CheckpointProblem::Checksum { stored, computed }));
    }
    // Checksum covers everything up to itself; stop payload reads there.
    r.bytes = body;

    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| r.problem(CheckpointProblem::Header(e.to_string())))?;
    if header.init != INIT_SCHEME {
        return Err(r.problem(CheckpointProblem::Header(format!(
            "unknown init scheme {:?}",
            header.init
        ))));
    }
    header.arch.validate()?;

    // The file overwrites every learnable and every running stat, so the
    // build seed is irrelevant.
    let mut model = build_model(&header.arch, 0)?;
    if model.count_parameters() != header.param_count {
        return Err(r.problem(CheckpointProblem::Header(format!(
            "param_count {} does not match architecture ({})",
            header.param_count,
            model.count_parameters()
        ))));
    }

    for t in model.param_tensors_mut() {
        for v in t.data_mut() {
            *v = r.f64("parameters")?;
        }
    }
    for running in model.bn_running_mut() {
        for v in running.mean.data_mut() {
            *v = r.f64("running means")?;
        }
        for v in running.var.data_mut() {
            *v = r.f64("running variances")?;
        }
        let flag = r.take(1, "running-stat flag")?[0];
        running.initialized = match flag {
            0 => false,
            1 => true,
            other => {
                return Err(r.problem(CheckpointProblem::Header(format!(
                    "running-stat flag must be 0 or 1, got {other}"
                ))))
            }
        };
    }
    if r.pos != r.bytes.len() {
        return Err(r.problem(CheckpointProblem::Header(format!(
            "{} unexpected trailing bytes",
            r.bytes.len() - r.pos
        ))));
    }
    Ok(model)
}

/// Loads and additionally insists the stored architecture equals
/// `expected`, naming the first differing field.
pub fn load_checkpoint_expecting(path: &Path, expected: &ArchConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    let got = &model.config;
    let mismatch = |field: &'static str, in_file: String, want: String| {
        Err(Error::Checkpoint {
            path: path.to_path_buf(),
            problem: CheckpointProblem::ArchMismatch { field, in_file, expected: want },
        })
    };
    macro_rules! check {
        ($field:ident) => {
            if got.$field != expected.$field {
                return mismatch(
                    stringify!($field),
                    format!("{:?}", got.$field),
                    format!("{:?}", expected.$field),
                );
            }
        };
    }
    check!(depth);
    check!(base_filters);
    check!(kernel_size_standard);
    check!(kernel_size_dilated);
    check!(dilation_schedule);
    check!(input_size);
    check!(in_channels);
    check!(out_classes);
    check!(bottleneck);
    Ok(model)
}

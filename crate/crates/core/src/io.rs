//! Artifact formats: the binary checkpoint container and versioned JSONL.
//!
//! Checkpoint layout (little-endian): `"MCTL"`, u16 version, u16 mode tag,
//! u32 input dim, u32 output dim, then every MLP parameter as f64 in the
//! flat order of [`MlpParams`]. Hidden widths are fixed and not stored.
//!
//! Every JSONL artifact starts with `{"format": <kind>, "version": N}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backbone::policy::BackboneParams;
use crate::backbone::FEATURE_DIM;
use crate::error::{Error, Result};
use crate::gate::{GateKind, GateParams, DEFAULT_THRESHOLD};
use crate::nn::mlp::{MlpParams, HIDDEN1, HIDDEN2};

pub const MAGIC: &[u8; 4] = b"MCTL";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
/// Mode tag for action-head checkpoints; gates use [`GateKind::tag`].
pub const BACKBONE_TAG: u16 = 0;
pub const JSONL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u16,
    pub mode: u16,
    pub input: u32,
    pub output: u32,
}

fn encode_mlp(mode: u16, mlp: &MlpParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * mlp.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&mode.to_le_bytes());
    out.extend_from_slice(&(mlp.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(mlp.output_dim() as u32).to_le_bytes());
    for v in &mlp.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn read_header(bytes: &[u8], path: &Path) -> Result<CheckpointHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(fmt_err(path, "truncated checkpoint header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt_err(path, "bad checkpoint magic"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let h = CheckpointHeader {
        version: u16_at(4),
        mode: u16_at(6),
        input: u32_at(8),
        output: u32_at(12),
    };
    if h.version != CHECKPOINT_VERSION {
        return Err(fmt_err(path, format!("unsupported checkpoint version {}", h.version)));
    }
    Ok(h)
}

fn decode_mlp(bytes: &[u8], path: &Path) -> Result<(u16, MlpParams)> {
    let h = read_header(bytes, path)?;
    if h.input as usize != FEATURE_DIM {
        return Err(Error::Checkpoint(format!(
            "{}: input dimension {} but the feature extractor produces {FEATURE_DIM}",
            path.display(),
            h.input
        )));
    }
    let body = &bytes[HEADER_LEN..];
    if !body.len().is_multiple_of(8) {
        return Err(fmt_err(path, "checkpoint body is not a whole number of f64"));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let widths = [h.input as usize, HIDDEN1, HIDDEN2, h.output as usize];
    let mlp = MlpParams::from_flat(widths, data).map_err(|e| match e {
        Error::Shape { expected, actual } => Error::Checkpoint(format!(
            "{}: expected {expected} parameters, found {actual}",
            path.display()
        )),
        other => other,
    })?;
    Ok((h.mode, mlp))
}

pub fn backbone_to_bytes(b: &BackboneParams) -> Vec<u8> {
    encode_mlp(BACKBONE_TAG, &b.head)
}

pub fn backbone_from_bytes(bytes: &[u8], path: &Path) -> Result<BackboneParams> {
    let (mode, head) = decode_mlp(bytes, path)?;
    if mode != BACKBONE_TAG {
        return Err(Error::Checkpoint(format!("{}: not a backbone checkpoint (mode {mode})", path.display())));
    }
    Ok(BackboneParams { head })
}

pub fn gate_to_bytes(g: &GateParams) -> Vec<u8> {
    encode_mlp(g.kind.tag(), &g.mlp)
}

pub fn gate_from_bytes(bytes: &[u8], path: &Path) -> Result<GateParams> {
    let (mode, mlp) = decode_mlp(bytes, path)?;
    let kind = GateKind::from_tag(mode)
        .ok_or_else(|| Error::Checkpoint(format!("{}: not a gate checkpoint (mode {mode})", path.display())))?;
    if mlp.output_dim() != 1 {
        return Err(Error::Checkpoint(format!("{}: gate must have one output", path.display())));
    }
    Ok(GateParams {
        mlp,
        kind,
        threshold: DEFAULT_THRESHOLD,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_backbone(path: &Path, b: &BackboneParams) -> Result<()> {
    write_bytes(path, &backbone_to_bytes(b))
}

pub fn load_backbone(path: &Path) -> Result<BackboneParams> {
    backbone_from_bytes(&read_bytes(path)?, path)
}

pub fn save_gate(path: &Path, g: &GateParams) -> Result<()> {
    write_bytes(path, &gate_to_bytes(g))
}

pub fn load_gate(path: &Path) -> Result<GateParams> {
    gate_from_bytes(&read_bytes(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionLine {
    pub format: String,
    pub version: u32,
}

/// Artifact kinds written as JSONL.
pub mod kind {
    pub const TASKS: &str = "memctrl.tasks";
    pub const BC_DATASET: &str = "memctrl.bc-dataset";
    pub const GATE_DATASET: &str = "memctrl.gate-dataset";
    pub const CURVE: &str = "memctrl.curve";
    pub const TRACES: &str = "memctrl.traces";
    pub const REPORT: &str = "memctrl.report";
    pub const COMPARISON: &str = "memctrl.comparison";
    pub const MANIFEST: &str = "memctrl.manifest";
}

/// Serialize a version line followed by one record per line.
pub fn jsonl_to_string<T: Serialize>(format: &str, records: &[T]) -> Result<String> {
    let mut s = String::new();
    let head = VersionLine {
        format: format.into(),
        version: JSONL_VERSION,
    };
    s.push_str(&serde_json::to_string(&head).map_err(|e| Error::Dataset(e.to_string()))?);
    s.push('\n');
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| Error::Dataset(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn write_jsonl<T: Serialize>(path: &Path, format: &str, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(jsonl_to_string(format, records)?.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parse JSONL text, checking the version line first.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, format: &str, path: &Path) -> Result<Vec<T>> {
    parse_lines(text.lines().map(|l| Ok(l.to_string())), format, path)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, format: &str) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines = BufReader::new(f).lines().map(|l| l.map_err(|e| Error::io(path, e)));
    parse_lines(lines, format, path)
}

fn parse_lines<T: DeserializeOwned>(mut lines: impl Iterator<Item = Result<String>>, format: &str, path: &Path) -> Result<Vec<T>> {
    let first = lines.next().transpose()?.ok_or_else(|| fmt_err(path, "missing version line"))?;
    let head: VersionLine =
        serde_json::from_str(&first).map_err(|e| fmt_err(path, format!("bad version line: {e}")))?;
    if head.format != format {
        return Err(fmt_err(path, format!("expected {format}, found {}", head.format)));
    }
    if head.version != JSONL_VERSION {
        return Err(fmt_err(path, format!("unsupported version {}", head.version)));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| fmt_err(path, format!("line {}: {e}", i + 2)))?);
    }
    Ok(out)
}

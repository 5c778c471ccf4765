//! File formats: OFF meshes, JSON grid specs and labels, CSV histogram
//! matrices and the binary metric cache.
//!
//! Floats are written with Rust's shortest round-trip rendering, so every
//! write/read pair reproduces the values exactly.

use std::fmt::Write as _;

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{GroundMetric, SquareMatrix};
use crate::error::Result;
use crate::metric_build::{GridSpec, Label, TriMesh};

pub const CACHE_MAGIC: &[u8; 4] = b"KMET";
pub const CACHE_VERSION: u32 = 1;
const CACHE_HEADER: usize = 16;

/// Malformed input. Line numbers are 1-based, byte offsets 0-based.
#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    MalformedHeader { line: usize, msg: String },
    #[error("line {line}: face has {found} vertices, only triangles are supported")]
    NonTriangleFace { line: usize, found: usize },
    #[error("line {line}: vertex index {index} out of range for {count} vertices")]
    IndexOutOfRange { line: usize, index: usize, count: usize },
    #[error("line {line}: expected {expected} more lines")]
    UnexpectedEnd { line: usize, expected: usize },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("mask entry {position} = {index} is outside a grid of {voxel_count} voxels")]
    BadMaskIndex { position: usize, index: usize, voxel_count: usize },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRows { line: usize, expected: usize, found: usize },
    #[error("line {line}, field {field}: `{text}` is not a number")]
    NonNumericField { line: usize, field: usize, text: String },
    #[error("offset 0: bad magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("offset 4: unsupported version {0}")]
    VersionUnsupported(u32),
    #[error("offset {offset}: payload truncated, expected {expected} bytes in total")]
    TruncatedPayload { offset: usize, expected: usize },
    #[error("offset {offset}: {extra} trailing bytes")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("line {line}, column {column}: {msg}")]
    Json { line: usize, column: usize, msg: String },
}

impl From<serde_json::Error> for FormatError {
    fn from(e: serde_json::Error) -> Self {
        FormatError::Json { line: e.line(), column: e.column(), msg: e.to_string() }
    }
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_count(tok: Option<&str>, line: usize, what: &str) -> Result<usize, FormatError> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| FormatError::MalformedHeader { line, msg: format!("expected {what}") })
}

/// Accepts plain decimal notation with an optional exponent; rejects `inf` and `nan`.
fn parse_real(text: &str) -> Option<f64> {
    let ok = !text.is_empty()
        && text.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'))
        && text.bytes().any(|b| b.is_ascii_digit());
    if !ok {
        return None;
    }
    text.parse::<f64>().ok().filter(|x| x.is_finite())
}

pub fn parse_off(text: &str) -> Result<TriMesh> {
    let mut lines = content_lines(text);
    let last_line = text.lines().count();
    let eof = |expected| FormatError::UnexpectedEnd { line: last_line, expected };

    let (line, head) = lines.next().ok_or(FormatError::MalformedHeader { line: 1, msg: "empty file".into() })?;
    let mut toks = head.split_whitespace();
    if toks.next() != Some("OFF") {
        return Err(FormatError::MalformedHeader { line, msg: "first line must be `OFF`".into() }.into());
    }
    // Counts may share the keyword line.
    let counts: Vec<&str> = toks.collect();
    let (line, counts) = if counts.is_empty() {
        let (l, c) = lines.next().ok_or(eof(1))?;
        (l, c.split_whitespace().collect())
    } else {
        (line, counts)
    };
    if counts.len() != 3 {
        return Err(FormatError::MalformedHeader { line, msg: "expected counts `nv nf ne`".into() }.into());
    }
    let mut it = counts.into_iter();
    let nv = parse_count(it.next(), line, "vertex count")?;
    let nf = parse_count(it.next(), line, "face count")?;
    parse_count(it.next(), line, "edge count")?;

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (line, l) = lines.next().ok_or(eof(nv - k + nf))?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(FormatError::RaggedRows { line, expected: 3, found: fields.len() }.into());
        }
        let mut v = [0.0; 3];
        for (c, f) in fields[..3].iter().enumerate() {
            v[c] = parse_real(f).ok_or_else(|| FormatError::NonNumericField { line, field: c + 1, text: f.to_string() })?;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(nf);
    for k in 0..nf {
        let (line, l) = lines.next().ok_or(eof(nf - k))?;
        let mut fields = l.split_whitespace();
        let n: usize = parse_count(fields.next(), line, "face vertex count")?;
        if n != 3 {
            return Err(FormatError::NonTriangleFace { line, found: n }.into());
        }
        let mut f = [0usize; 3];
        for (c, slot) in f.iter_mut().enumerate() {
            let tok = fields.next().ok_or(FormatError::RaggedRows { line, expected: 4, found: c + 1 })?;
            let idx: usize = tok
                .parse()
                .map_err(|_| FormatError::NonNumericField { line, field: c + 2, text: tok.to_string() })?;
            if idx >= nv {
                return Err(FormatError::IndexOutOfRange { line, index: idx, count: nv }.into());
            }
            *slot = idx;
        }
        faces.push(f);
    }
    TriMesh::new(vertices, faces)
}

pub fn write_off(mesh: &TriMesh) -> String {
    let mut s = String::from("OFF\n");
    let _ = writeln!(s, "{} {} {}", mesh.vertex_count(), mesh.faces().len(), mesh.edges().len());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

#[derive(Deserialize)]
struct RawGridSpec {
    shape: Option<[usize; 3]>,
    voxel_size_mm: Option<[f64; 3]>,
    mask: Option<Vec<usize>>,
}

pub fn parse_gridspec(text: &str) -> Result<GridSpec> {
    let raw: RawGridSpec = serde_json::from_str(text).map_err(FormatError::from)?;
    let shape = raw.shape.ok_or_else(|| FormatError::MissingField("shape".into()))?;
    let voxel_size_mm = raw.voxel_size_mm.ok_or_else(|| FormatError::MissingField("voxel_size_mm".into()))?;
    let voxel_count: usize = shape.iter().product();
    if let Some(mask) = &raw.mask {
        if let Some(position) = mask.iter().position(|&i| i >= voxel_count) {
            return Err(FormatError::BadMaskIndex { position, index: mask[position], voxel_count }.into());
        }
    }
    let spec = GridSpec { shape, voxel_size_mm, mask: raw.mask };
    spec.validate()?;
    Ok(spec)
}

pub fn write_gridspec(spec: &GridSpec) -> String {
    serde_json::to_string_pretty(spec).expect("grid spec serializes")
}

/// One row per line, comma separated, no header.
pub fn read_matrix_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let row = l
            .split(',')
            .enumerate()
            .map(|(c, f)| {
                let f = f.trim();
                parse_real(f).ok_or_else(|| FormatError::NonNumericField { line, field: c + 1, text: f.to_string() })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(FormatError::RaggedRows { line, expected: first.len(), found: row.len() }.into());
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_vector_csv(v: &[f64]) -> String {
    let mut s = String::new();
    push_row(&mut s, v);
    s
}

pub fn write_matrix_csv(rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for r in rows {
        push_row(&mut s, r);
    }
    s
}

fn push_row(s: &mut String, v: &[f64]) {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x:?}");
    }
    s.push('\n');
}

pub fn write_metric_cache(metric: &GroundMetric) -> Vec<u8> {
    let d = metric.d();
    let mut out = Vec::with_capacity(CACHE_HEADER + 8 * d * d);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for x in metric.matrix().as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn read_metric_cache(bytes: &[u8]) -> Result<GroundMetric> {
    GroundMetric::new(read_matrix_cache(bytes)?)
}

/// Decodes a cache file without checking the metric axioms.
pub fn read_matrix_cache(bytes: &[u8]) -> Result<SquareMatrix> {
    if bytes.len() < 4 || &bytes[..4] != CACHE_MAGIC {
        return Err(FormatError::BadMagic { found: bytes[..bytes.len().min(4)].to_vec() }.into());
    }
    if bytes.len() < CACHE_HEADER {
        return Err(FormatError::TruncatedPayload { offset: bytes.len(), expected: CACHE_HEADER }.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(FormatError::VersionUnsupported(version).into());
    }
    let d = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let expected = usize::try_from(d)
        .ok()
        .and_then(|d| d.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(CACHE_HEADER))
        .ok_or(FormatError::TruncatedPayload { offset: bytes.len(), expected: usize::MAX })?;
    if bytes.len() < expected {
        return Err(FormatError::TruncatedPayload { offset: bytes.len(), expected }.into());
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes { offset: expected, extra: bytes.len() - expected }.into());
    }
    let data: Vec<f64> = bytes[CACHE_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    SquareMatrix::from_vec(d as usize, data)
}

pub fn parse_label(text: &str) -> Result<Label> {
    Ok(serde_json::from_str(text).map_err(FormatError::from)?)
}

pub fn write_label(label: &Label) -> String {
    serde_json::to_string_pretty(label).expect("label serializes")
}

//! The `HOMOGNX1` container for activation and attention dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "HOMOGNX1"
//! offset 8   u64       manifest length in bytes (M)
//! offset 16  M bytes   UTF-8 JSON manifest (StackManifest)
//! offset 16+M          payload: IEEE-754 values, row-major, in manifest order
//! ```
//!
//! Sample entry offsets are relative to the start of the payload. An
//! activation sample is `num_layers + 1` blocks of `n x d`; an attention
//! sample is `num_layers` blocks of `num_heads x n x n`.
//!
//! Everything read back is validated, and widened to `f64` in memory.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HOMOGNX1";
pub const FORMAT_VERSION: &str = "1.0";

/// Maximum deviation of an attention row sum from 1.
pub const ROW_SUM_TOL: f64 = 1e-4;
/// Maximum magnitude of an above-diagonal entry in a causal attention matrix.
pub const CAUSAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Original,
    Front,
    End,
    Synthetic,
    Other,
}

impl DatasetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Original => "original",
            DatasetTag::Front => "front",
            DatasetTag::End => "end",
            DatasetTag::Synthetic => "synthetic",
            DatasetTag::Other => "other",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackKind {
    Activation,
    Attention,
}

/// Per-layer token representations of one sample.
///
/// `layers[0]` is the embedding output, `layers[L]` the final layer. Rows
/// are tokens, columns hidden dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStack {
    pub sample_id: String,
    pub layers: Vec<DMatrix<f64>>,
    pub model_tag: String,
    pub dataset_tag: DatasetTag,
    /// Where in the block the hidden state was captured, free text.
    pub capture_point: Option<String>,
}

impl ActivationStack {
    pub fn new(
        sample_id: impl Into<String>,
        layers: Vec<DMatrix<f64>>,
        model_tag: impl Into<String>,
        dataset_tag: DatasetTag,
    ) -> Self {
        ActivationStack {
            sample_id: sample_id.into(),
            layers,
            model_tag: model_tag.into(),
            dataset_tag,
            capture_point: None,
        }
    }

    /// Number of transformer layers `L` (the stack holds `L + 1` matrices).
    pub fn num_layers(&self) -> usize {
        self.layers.len().saturating_sub(1)
    }

    pub fn token_count(&self) -> usize {
        self.layers.first().map_or(0, |m| m.nrows())
    }

    pub fn hidden_size(&self) -> usize {
        self.layers.first().map_or(0, |m| m.ncols())
    }
}

/// Per-layer, per-head attention probabilities of one sample.
///
/// `layers[l][h]` is an `n x n` query-by-key matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub sample_id: String,
    pub layers: Vec<Vec<DMatrix<f64>>>,
    pub causal: bool,
    pub model_tag: String,
    pub dataset_tag: DatasetTag,
}

impl AttentionStack {
    pub fn new(
        sample_id: impl Into<String>,
        layers: Vec<Vec<DMatrix<f64>>>,
        causal: bool,
        model_tag: impl Into<String>,
        dataset_tag: DatasetTag,
    ) -> Self {
        AttentionStack {
            sample_id: sample_id.into(),
            layers,
            causal,
            model_tag: model_tag.into(),
            dataset_tag,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_heads(&self) -> usize {
        self.layers.first().map_or(0, |l| l.len())
    }

    pub fn token_count(&self) -> usize {
        self.layers
            .first()
            .and_then(|l| l.first())
            .map_or(0, |m| m.nrows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stack {
    Activation(ActivationStack),
    Attention(AttentionStack),
}

impl Stack {
    pub fn kind(&self) -> StackKind {
        match self {
            Stack::Activation(_) => StackKind::Activation,
            Stack::Attention(_) => StackKind::Attention,
        }
    }

    pub fn sample_id(&self) -> &str {
        match self {
            Stack::Activation(s) => &s.sample_id,
            Stack::Attention(s) => &s.sample_id,
        }
    }
}

impl From<ActivationStack> for Stack {
    fn from(s: ActivationStack) -> Self {
        Stack::Activation(s)
    }
}

impl From<AttentionStack> for Stack {
    fn from(s: AttentionStack) -> Self {
        Stack::Attention(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub token_count: usize,
    /// Byte offset relative to the start of the payload.
    pub offset: u64,
    /// Byte length of this sample's payload.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub format_version: String,
    pub kind: StackKind,
    pub model_tag: String,
    pub dataset_tag: DatasetTag,
    /// Transformer layer count `L`.
    pub num_layers: usize,
    /// Heads per layer; 0 for activation stacks.
    #[serde(default)]
    pub num_heads: usize,
    /// Hidden size `d`; 0 for attention stacks.
    #[serde(default)]
    pub hidden_size: usize,
    pub dtype: Dtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub includes_special_tokens: Option<bool>,
    pub samples: Vec<SampleEntry>,
}

impl StackManifest {
    fn blocks(&self) -> usize {
        match self.kind {
            StackKind::Activation => self.num_layers + 1,
            StackKind::Attention => self.num_layers,
        }
    }

    fn block_elems(&self, n: usize) -> usize {
        match self.kind {
            StackKind::Activation => n * self.hidden_size,
            StackKind::Attention => self.num_heads * n * n,
        }
    }

    /// Payload bytes a sample with `n` tokens must occupy.
    pub fn expected_length(&self, n: usize) -> u64 {
        (self.blocks() * self.block_elems(n) * self.dtype.size()) as u64
    }
}

/// A single invariant violation found by [`validate_stack`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoLayers,
    TooFewTokens { n: usize },
    TooFewDims { d: usize },
    NonFinite { layer: usize, head: Option<usize>, row: usize, col: usize },
    LayerShape { layer: usize, expected: (usize, usize), found: (usize, usize) },
    HeadCount { layer: usize, expected: usize, found: usize },
    HeadShape { layer: usize, head: usize, expected: (usize, usize), found: (usize, usize) },
    RowStochastic { layer: usize, head: usize, row: usize, sum: f64 },
    OutOfRange { layer: usize, head: usize, row: usize, col: usize, value: f64 },
    CausalMask { layer: usize, head: usize, entries: usize, max: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoLayers => write!(f, "stack has no layers"),
            Violation::TooFewTokens { n } => write!(f, "token count {n} < 2"),
            Violation::TooFewDims { d } => write!(f, "hidden size {d} < 2"),
            Violation::NonFinite { layer, head: None, row, col } => {
                write!(f, "non-finite entry at ({layer}, {row}, {col})")
            }
            Violation::NonFinite { layer, head: Some(h), row, col } => {
                write!(f, "non-finite entry at ({layer}, {row}, {col}) in head {h}")
            }
            Violation::LayerShape { layer, expected, found } => write!(
                f,
                "layer {layer} has shape {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::HeadCount { layer, expected, found } => {
                write!(f, "layer {layer} has {found} heads, expected {expected}")
            }
            Violation::HeadShape { layer, head, expected, found } => write!(
                f,
                "layer {layer} head {head} has shape {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::RowStochastic { layer, head, row, sum } => write!(
                f,
                "row-stochastic violation at layer {layer} head {head} row {row}: sum = {sum}"
            ),
            Violation::OutOfRange { layer, head, row, col, value } => write!(
                f,
                "attention entry {value} outside [0, 1] at layer {layer} head {head} ({row}, {col})"
            ),
            Violation::CausalMask { layer, head, entries, max } => write!(
                f,
                "causal mask violation at layer {layer} head {head}: {entries} nonzero entries above the diagonal (max {max})"
            ),
        }
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

fn validate_activation(stack: &ActivationStack) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(first) = stack.layers.first() else {
        out.push(Violation::NoLayers);
        return out;
    };
    let shape = first.shape();
    if shape.0 < 2 {
        out.push(Violation::TooFewTokens { n: shape.0 });
    }
    if shape.1 < 2 {
        out.push(Violation::TooFewDims { d: shape.1 });
    }
    for (layer, m) in stack.layers.iter().enumerate() {
        if m.shape() != shape {
            out.push(Violation::LayerShape { layer, expected: shape, found: m.shape() });
        }
        if let Some((row, col)) = first_non_finite(m) {
            out.push(Violation::NonFinite { layer, head: None, row, col });
        }
    }
    out
}

fn validate_attention(stack: &AttentionStack) -> Vec<Violation> {
    let mut out = Vec::new();
    if stack.layers.is_empty() {
        out.push(Violation::NoLayers);
        return out;
    }
    let heads = stack.num_heads();
    let n = stack.token_count();
    if n < 2 {
        out.push(Violation::TooFewTokens { n });
    }
    for (layer, hs) in stack.layers.iter().enumerate() {
        if hs.len() != heads || heads == 0 {
            out.push(Violation::HeadCount { layer, expected: heads.max(1), found: hs.len() });
        }
        for (head, a) in hs.iter().enumerate() {
            if a.shape() != (n, n) {
                out.push(Violation::HeadShape { layer, head, expected: (n, n), found: a.shape() });
                continue;
            }
            if let Some((row, col)) = first_non_finite(a) {
                out.push(Violation::NonFinite { layer, head: Some(head), row, col });
                continue;
            }
            if let Some((row, col, value)) = (0..n)
                .flat_map(|r| (0..n).map(move |c| (r, c)))
                .map(|(r, c)| (r, c, a[(r, c)]))
                .find(|&(_, _, v)| !(0.0..=1.0).contains(&v))
            {
                out.push(Violation::OutOfRange { layer, head, row, col, value });
            }
            if let Some((row, sum)) = (0..n)
                .map(|r| (r, a.row(r).sum()))
                .find(|&(_, s)| (s - 1.0).abs() > ROW_SUM_TOL)
            {
                out.push(Violation::RowStochastic { layer, head, row, sum });
            }
            if stack.causal {
                let mut entries = 0;
                let mut max = 0.0f64;
                for r in 0..n {
                    for c in r + 1..n {
                        let v = a[(r, c)].abs();
                        if v > CAUSAL_TOL {
                            entries += 1;
                            max = max.max(v);
                        }
                    }
                }
                if entries > 0 {
                    out.push(Violation::CausalMask { layer, head, entries, max });
                }
            }
        }
    }
    out
}

/// Checks every type invariant; an empty report means the stack is valid.
pub fn validate_stack(stack: &Stack) -> Vec<Violation> {
    match stack {
        Stack::Activation(s) => validate_activation(s),
        Stack::Attention(s) => validate_attention(s),
    }
}

fn manifest_for(stack: &Stack, dtype: Dtype) -> StackManifest {
    match stack {
        Stack::Activation(s) => StackManifest {
            format_version: FORMAT_VERSION.to_string(),
            kind: StackKind::Activation,
            model_tag: s.model_tag.clone(),
            dataset_tag: s.dataset_tag,
            num_layers: s.num_layers(),
            num_heads: 0,
            hidden_size: s.hidden_size(),
            dtype,
            causal: None,
            capture_point: s.capture_point.clone(),
            includes_special_tokens: None,
            samples: vec![SampleEntry {
                id: s.sample_id.clone(),
                token_count: s.token_count(),
                offset: 0,
                length: 0,
            }],
        },
        Stack::Attention(s) => StackManifest {
            format_version: FORMAT_VERSION.to_string(),
            kind: StackKind::Attention,
            model_tag: s.model_tag.clone(),
            dataset_tag: s.dataset_tag,
            num_layers: s.num_layers(),
            num_heads: s.num_heads(),
            hidden_size: 0,
            dtype,
            causal: Some(s.causal),
            capture_point: None,
            includes_special_tokens: None,
            samples: vec![SampleEntry {
                id: s.sample_id.clone(),
                token_count: s.token_count(),
                offset: 0,
                length: 0,
            }],
        },
    }
}

fn push_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>, dtype: Dtype) {
    // nalgebra is column-major; the container is row-major
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            match dtype {
                Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
}

/// Serializes a stack into container bytes.
pub fn encode_stack(stack: &Stack, dtype: Dtype) -> Result<Vec<u8>> {
    let violations = validate_stack(stack);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    if dtype == Dtype::F32 {
        check_f32_range(stack)?;
    }
    let mut payload = Vec::new();
    match stack {
        Stack::Activation(s) => s.layers.iter().for_each(|m| push_matrix(&mut payload, m, dtype)),
        Stack::Attention(s) => s
            .layers
            .iter()
            .flatten()
            .for_each(|m| push_matrix(&mut payload, m, dtype)),
    }
    let mut manifest = manifest_for(stack, dtype);
    manifest.samples[0].length = payload.len() as u64;
    let json = serde_json::to_vec(&manifest)?;

    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn check_f32_range(stack: &Stack) -> Result<()> {
    let overflow = |m: &DMatrix<f64>| m.iter().any(|v| !(*v as f32).is_finite());
    let bad = match stack {
        Stack::Activation(s) => s.layers.iter().position(overflow),
        Stack::Attention(s) => s.layers.iter().position(|hs| hs.iter().any(overflow)),
    };
    match bad {
        Some(layer) => Err(Error::NonFinite(format!(
            "layer {layer} overflows f32; write with dtype f64"
        ))),
        None => Ok(()),
    }
}

/// Writes `stack` as an `f32` container.
pub fn write_stack(stack: &Stack, path: impl AsRef<Path>) -> Result<()> {
    write_stack_as(stack, path, Dtype::F32)
}

pub fn write_stack_as(stack: &Stack, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let bytes = encode_stack(stack, dtype)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io_at(path, e))
}

/// Splits container bytes into the manifest and the payload slice.
pub fn decode_manifest(bytes: &[u8]) -> Result<(StackManifest, &[u8])> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::TruncatedPayload("missing manifest length".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            Error::TruncatedPayload(format!(
                "manifest declares {len} bytes, {} available",
                bytes.len() - 16
            ))
        })?;
    let manifest: StackManifest = serde_json::from_slice(&bytes[16..end])?;
    if manifest.format_version.split('.').next() != Some("1") {
        return Err(Error::VersionMismatch { found: manifest.format_version });
    }
    Ok((manifest, &bytes[end..]))
}

fn read_values(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    }
}

fn check_layout(manifest: &StackManifest, payload_len: usize) -> Result<()> {
    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let expected = manifest.expected_length(entry.token_count);
        let available = (payload_len as u64).saturating_sub(entry.offset);
        if entry.offset > payload_len as u64 || expected > available {
            return Err(Error::TruncatedPayload(format!(
                "sample {:?} needs {expected} bytes at offset {}, payload has {payload_len}",
                entry.id, entry.offset
            )));
        }
        if entry.length != expected {
            return Err(Error::ShapeMismatch(format!(
                "sample {:?} declares {} bytes, shape implies {expected}",
                entry.id, entry.length
            )));
        }
        spans.push((entry.offset, entry.offset + entry.length, &entry.id));
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::ShapeMismatch(format!(
                "samples {:?} and {:?} overlap",
                w[0].2, w[1].2
            )));
        }
    }
    Ok(())
}

fn decode_sample(manifest: &StackManifest, entry: &SampleEntry, payload: &[u8]) -> Stack {
    let start = entry.offset as usize;
    let values = read_values(&payload[start..start + entry.length as usize], manifest.dtype);
    let n = entry.token_count;
    match manifest.kind {
        StackKind::Activation => {
            let d = manifest.hidden_size;
            let layers = values
                .chunks_exact((n * d).max(1))
                .take(manifest.blocks())
                .map(|block| DMatrix::from_row_slice(n, d, block))
                .collect();
            Stack::Activation(ActivationStack {
                sample_id: entry.id.clone(),
                layers,
                model_tag: manifest.model_tag.clone(),
                dataset_tag: manifest.dataset_tag,
                capture_point: manifest.capture_point.clone(),
            })
        }
        StackKind::Attention => {
            let layers = values
                .chunks_exact((manifest.num_heads * n * n).max(1))
                .take(manifest.blocks())
                .map(|block| {
                    block
                        .chunks_exact((n * n).max(1))
                        .map(|h| DMatrix::from_row_slice(n, n, h))
                        .collect()
                })
                .collect();
            Stack::Attention(AttentionStack {
                sample_id: entry.id.clone(),
                layers,
                causal: manifest.causal.unwrap_or(false),
                model_tag: manifest.model_tag.clone(),
                dataset_tag: manifest.dataset_tag,
            })
        }
    }
}

/// Decodes every sample in a container, validating each.
pub fn decode_container(bytes: &[u8]) -> Result<(StackManifest, Vec<Stack>)> {
    let (manifest, payload) = decode_manifest(bytes)?;
    check_layout(&manifest, payload.len())?;
    let mut stacks = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let stack = decode_sample(&manifest, entry, payload);
        let violations = validate_stack(&stack);
        if !violations.is_empty() {
            return Err(Error::Invalid(violations));
        }
        stacks.push(stack);
    }
    Ok((manifest, stacks))
}

/// Checks a whole container and reports violations per sample id.
///
/// Structural problems (magic, version, manifest, layout) are returned as
/// errors; value-level violations are collected for every sample.
pub fn validate_container(bytes: &[u8]) -> Result<(StackManifest, Vec<(String, Vec<Violation>)>)> {
    let (manifest, payload) = decode_manifest(bytes)?;
    check_layout(&manifest, payload.len())?;
    let report = manifest
        .samples
        .iter()
        .map(|entry| {
            let stack = decode_sample(&manifest, entry, payload);
            (entry.id.clone(), validate_stack(&stack))
        })
        .filter(|(_, v)| !v.is_empty())
        .collect();
    Ok((manifest, report))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<(StackManifest, Vec<Stack>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    decode_container(&bytes)
}

/// Reads a single-sample container.
pub fn read_stack(path: impl AsRef<Path>) -> Result<Stack> {
    let (_, mut stacks) = read_container(path)?;
    if stacks.len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected exactly one sample, container holds {}",
            stacks.len()
        )));
    }
    Ok(stacks.remove(0))
}

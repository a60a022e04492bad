//! Sentence annotation records and the `.senrec.jsonl` interchange format.
//!
//! Each line of an interchange file is one [`SentenceRecord`]: word-level
//! tokens with lemma and universal POS, non-overlapping noun chunks, and the
//! attention matrix of the sentence. The attention payload is base64 of
//! little-endian `f32`, row-major, either `[T, T]` (reduced) or `[H, T, T]`
//! (per head).
//!
//! Orientation: `values[i][j]` is the weight with which token `i` attends to
//! token `j`.

use std::fmt;
use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: attention dim {dim} does not match token count {tokens}")]
    ShapeMismatch {
        line: usize,
        dim: usize,
        tokens: usize,
    },
    #[error("line {line}: bad attention payload: {message}")]
    BadEncoding { line: usize, message: String },
    #[error("{}invalid record: {reason}", line_prefix(*.line))]
    Validation { line: Option<usize>, reason: String },
    #[error("attention tensor is already reduced")]
    AlreadyReduced,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl CorpusError {
    /// Line number of the offending record, when the error came from a reader.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::MalformedRecord { line, .. }
            | CorpusError::ShapeMismatch { line, .. }
            | CorpusError::BadEncoding { line, .. } => Some(*line),
            CorpusError::Validation { line, .. } => *line,
            _ => None,
        }
    }
}

/// The 17-tag Universal POS inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenAnnotation {
    pub text: String,
    pub lemma: String,
    pub pos: Upos,
    /// Byte offset into the sentence text.
    pub char_start: usize,
    /// Exclusive byte offset.
    pub char_end: usize,
}

impl TokenAnnotation {
    pub fn new(text: &str, lemma: &str, pos: Upos, char_start: usize) -> Self {
        Self {
            text: text.to_string(),
            lemma: lemma.to_string(),
            pos,
            char_start,
            char_end: char_start + text.len(),
        }
    }
}

/// A noun chunk spanning `first_token..=last_token`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NounChunk {
    pub first_token: usize,
    pub last_token: usize,
    pub surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_surface: Option<String>,
}

impl NounChunk {
    pub fn new(first_token: usize, last_token: usize, surface: &str) -> Self {
        Self {
            first_token,
            last_token,
            surface: surface.to_string(),
            resolved_surface: None,
        }
    }

    pub fn contains(&self, token: usize) -> bool {
        (self.first_token..=self.last_token).contains(&token)
    }

    pub fn len(&self) -> usize {
        self.last_token - self.first_token + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Reduced,
    PerHead,
}

/// Which head reduction produced a reduced tensor (`None` for per-head data).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    None,
    Mean,
    Max,
}

/// Operator used to collapse heads into a single matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadReduction {
    Mean,
    Max,
}

impl From<HeadReduction> for Reduction {
    fn from(op: HeadReduction) -> Self {
        match op {
            HeadReduction::Mean => Reduction::Mean,
            HeadReduction::Max => Reduction::Max,
        }
    }
}

impl std::str::FromStr for HeadReduction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(HeadReduction::Mean),
            "max" => Ok(HeadReduction::Max),
            other => Err(format!(
                "unknown head reduction {other:?} (expected mean or max)"
            )),
        }
    }
}

/// Attention weights of one layer view, either reduced to one head or per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor<S> {
    layout: Layout,
    num_heads: usize,
    dim: usize,
    values: Vec<S>,
    layer_spec: String,
    reduction: Reduction,
}

impl<S: Scalar> AttentionTensor<S> {
    /// A `[dim, dim]` row-major matrix.
    pub fn reduced(
        dim: usize,
        values: Vec<S>,
        layer_spec: &str,
        reduction: Reduction,
    ) -> Result<Self, CorpusError> {
        let t = Self {
            layout: Layout::Reduced,
            num_heads: 1,
            dim,
            values,
            layer_spec: layer_spec.to_string(),
            reduction,
        };
        t.check().map_err(|p| p.at(None))?;
        Ok(t)
    }

    /// A `[num_heads, dim, dim]` row-major tensor.
    pub fn per_head(
        num_heads: usize,
        dim: usize,
        values: Vec<S>,
        layer_spec: &str,
    ) -> Result<Self, CorpusError> {
        let t = Self {
            layout: Layout::PerHead,
            num_heads,
            dim,
            values,
            layer_spec: layer_spec.to_string(),
            reduction: Reduction::None,
        };
        t.check().map_err(|p| p.at(None))?;
        Ok(t)
    }

    /// Builds a reduced tensor from nested rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self, CorpusError> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Problem::Invalid("attention rows are not square".into()).at(None));
        }
        Self::reduced(dim, rows.concat(), "fixture", Reduction::Mean)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn layer_spec(&self) -> &str {
        &self.layer_spec
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn is_reduced(&self) -> bool {
        self.layout == Layout::Reduced
    }

    /// Weight with which token `i` attends to token `j` (reduced tensors only).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(self.is_reduced());
        self.values[i * self.dim + j]
    }

    #[inline]
    pub fn head(&self, h: usize, i: usize, j: usize) -> S {
        self.values[(h * self.dim + i) * self.dim + j]
    }

    fn check(&self) -> Result<(), Problem> {
        let heads = match self.layout {
            Layout::Reduced => {
                if self.reduction == Reduction::None {
                    return Err(Problem::Invalid(
                        "reduced layout requires reduction_applied mean or max".into(),
                    ));
                }
                1
            }
            Layout::PerHead => {
                if self.reduction != Reduction::None {
                    return Err(Problem::Invalid(
                        "per_head layout requires reduction_applied none".into(),
                    ));
                }
                if self.num_heads == 0 {
                    return Err(Problem::Invalid("num_heads must be positive".into()));
                }
                self.num_heads
            }
        };
        let expected = heads * self.dim * self.dim;
        if self.values.len() != expected {
            return Err(Problem::Encoding(format!(
                "expected {expected} values, found {}",
                self.values.len()
            )));
        }
        if let Some(v) = self
            .values
            .iter()
            .find(|v| !(v.is_finite() && **v >= S::zero()))
        {
            return Err(Problem::Invalid(format!(
                "attention weights must be finite and non-negative, found {v}"
            )));
        }
        Ok(())
    }
}

/// One annotated sentence: the unit of matching.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord<S> {
    pub doc_id: String,
    pub sent_id: u64,
    pub text: String,
    pub tokens: Vec<TokenAnnotation>,
    pub chunks: Vec<NounChunk>,
    pub attention: AttentionTensor<S>,
}

impl<S: Scalar> SentenceRecord<S> {
    /// Checks every record invariant.
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.check().map_err(|p| p.at(None))
    }

    pub fn token_texts(&self, positions: &[usize]) -> Vec<&str> {
        positions
            .iter()
            .map(|&p| self.tokens[p].text.as_str())
            .collect()
    }

    fn check(&self) -> Result<(), Problem> {
        self.attention.check()?;
        if self.attention.dim != self.tokens.len() {
            return Err(Problem::Shape {
                dim: self.attention.dim,
                tokens: self.tokens.len(),
            });
        }
        let mut prev_end = 0usize;
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.char_start >= tok.char_end {
                return Err(Problem::Invalid(format!("token {i} has an empty span")));
            }
            if i > 0 && tok.char_start < prev_end {
                return Err(Problem::Invalid(format!(
                    "token {i} overlaps or precedes token {}",
                    i - 1
                )));
            }
            if tok.char_end > self.text.len() {
                return Err(Problem::Invalid(format!(
                    "token {i} ends past the sentence text"
                )));
            }
            prev_end = tok.char_end;
        }
        let n = self.tokens.len();
        for (c, chunk) in self.chunks.iter().enumerate() {
            if chunk.first_token > chunk.last_token || chunk.last_token >= n {
                return Err(Problem::Invalid(format!(
                    "chunk {c} span {}..={} is out of range for {n} tokens",
                    chunk.first_token, chunk.last_token
                )));
            }
            if c > 0 && chunk.first_token <= self.chunks[c - 1].last_token {
                return Err(Problem::Invalid(format!(
                    "chunk {c} overlaps or is out of order with chunk {}",
                    c - 1
                )));
            }
        }
        Ok(())
    }
}

enum Problem {
    Shape { dim: usize, tokens: usize },
    Encoding(String),
    Invalid(String),
}

impl Problem {
    fn at(self, line: Option<usize>) -> CorpusError {
        match (self, line) {
            (Problem::Shape { dim, tokens }, Some(line)) => {
                CorpusError::ShapeMismatch { line, dim, tokens }
            }
            (Problem::Encoding(message), Some(line)) => CorpusError::BadEncoding { line, message },
            (Problem::Shape { dim, tokens }, None) => CorpusError::Validation {
                line: None,
                reason: format!("attention dim {dim} does not match token count {tokens}"),
            },
            (Problem::Encoding(reason), None) | (Problem::Invalid(reason), None) => {
                CorpusError::Validation { line: None, reason }
            }
            (Problem::Invalid(reason), line) => CorpusError::Validation { line, reason },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireAttention {
    layout: Layout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_heads: Option<usize>,
    dim: usize,
    layer_spec: String,
    reduction_applied: Reduction,
    data_b64: String,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    doc_id: String,
    sent_id: u64,
    text: String,
    tokens: Vec<TokenAnnotation>,
    chunks: Vec<NounChunk>,
    attention: WireAttention,
}

fn encode_payload<S: Scalar>(values: &[S]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_wire().to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_payload<S: Scalar>(data: &str) -> Result<Vec<S>, String> {
    let bytes = B64.decode(data).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!(
            "payload length {} is not a multiple of 4",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| S::from_wire(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect())
}

impl<S: Scalar> SentenceRecord<S> {
    fn to_wire(&self) -> WireRecord {
        let att = &self.attention;
        WireRecord {
            doc_id: self.doc_id.clone(),
            sent_id: self.sent_id,
            text: self.text.clone(),
            tokens: self.tokens.clone(),
            chunks: self.chunks.clone(),
            attention: WireAttention {
                layout: att.layout,
                num_heads: (att.layout == Layout::PerHead).then_some(att.num_heads),
                dim: att.dim,
                layer_spec: att.layer_spec.clone(),
                reduction_applied: att.reduction,
                data_b64: encode_payload(&att.values),
            },
        }
    }

    fn from_wire(wire: WireRecord, line: usize) -> Result<Self, CorpusError> {
        let values = decode_payload(&wire.attention.data_b64)
            .map_err(|message| CorpusError::BadEncoding { line, message })?;
        let num_heads = match wire.attention.layout {
            Layout::Reduced => 1,
            Layout::PerHead => {
                wire.attention
                    .num_heads
                    .ok_or_else(|| CorpusError::MalformedRecord {
                        line,
                        message: "per_head attention requires num_heads".into(),
                    })?
            }
        };
        let record = SentenceRecord {
            doc_id: wire.doc_id,
            sent_id: wire.sent_id,
            text: wire.text,
            tokens: wire.tokens,
            chunks: wire.chunks,
            attention: AttentionTensor {
                layout: wire.attention.layout,
                num_heads,
                dim: wire.attention.dim,
                values,
                layer_spec: wire.attention.layer_spec,
                reduction: wire.attention.reduction_applied,
            },
        };
        record.check().map_err(|p| p.at(Some(line)))?;
        Ok(record)
    }
}

/// Streaming reader over an interchange file. Yields one item per non-blank line.
pub struct RecordReader<R, S> {
    input: R,
    line: usize,
    buf: String,
    done: bool,
    _scalar: std::marker::PhantomData<S>,
}

impl<R: BufRead, S: Scalar> Iterator for RecordReader<R, S> {
    type Item = Result<SentenceRecord<S>, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line += 1;
                    let text = self.buf.trim();
                    if text.is_empty() {
                        continue;
                    }
                    let line = self.line;
                    return Some(
                        serde_json::from_str::<WireRecord>(text)
                            .map_err(|e| CorpusError::MalformedRecord {
                                line,
                                message: e.to_string(),
                            })
                            .and_then(|w| SentenceRecord::from_wire(w, line)),
                    );
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
        None
    }
}

/// Lazily reads records in file order. Bad lines surface as errors carrying their
/// line number; reading continues past them.
pub fn read_records<R: BufRead, S: Scalar>(input: R) -> RecordReader<R, S> {
    RecordReader {
        input,
        line: 0,
        buf: String::new(),
        done: false,
        _scalar: std::marker::PhantomData,
    }
}

/// Writes records as JSON lines. All records are validated before the first byte
/// is written.
pub fn write_records<S: Scalar, W: Write>(
    records: &[SentenceRecord<S>],
    mut sink: W,
) -> Result<usize, CorpusError> {
    for (i, r) in records.iter().enumerate() {
        r.check().map_err(|p| match p.at(None) {
            CorpusError::Validation { reason, .. } => CorpusError::Validation {
                line: None,
                reason: format!("record {i} ({}#{}): {reason}", r.doc_id, r.sent_id),
            },
            other => other,
        })?;
    }
    for r in records {
        serde_json::to_writer(&mut sink, &r.to_wire()).map_err(std::io::Error::from)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(records.len())
}

/// Collapses per-head attention into one matrix with an elementwise mean or max.
pub fn reduce_attention<S: Scalar>(
    att: &AttentionTensor<S>,
    op: HeadReduction,
) -> Result<AttentionTensor<S>, CorpusError> {
    if att.layout == Layout::Reduced {
        return Err(CorpusError::AlreadyReduced);
    }
    let cells = att.dim * att.dim;
    let heads = att.num_heads;
    let mut out = Vec::with_capacity(cells);
    for cell in 0..cells {
        let column = (0..heads).map(|h| att.values[h * cells + cell]);
        let value = match op {
            HeadReduction::Max => column.fold(S::zero(), S::max),
            HeadReduction::Mean => {
                let (mut lo, mut hi, mut acc) = (S::infinity(), S::neg_infinity(), 0.0f64);
                for v in column {
                    lo = lo.min(v);
                    hi = hi.max(v);
                    acc += v.to_f64().unwrap_or(0.0);
                }
                // accumulate wide, then keep the result inside the head range despite rounding
                S::lit(acc / heads as f64).max(lo).min(hi)
            }
        };
        out.push(value);
    }
    Ok(AttentionTensor {
        layout: Layout::Reduced,
        num_heads: 1,
        dim: att.dim,
        values: out,
        layer_spec: att.layer_spec.clone(),
        reduction: op.into(),
    })
}

/// Returns the record with its attention reduced, or unchanged if already reduced.
pub fn ensure_reduced<S: Scalar>(
    mut record: SentenceRecord<S>,
    op: HeadReduction,
) -> SentenceRecord<S> {
    if !record.attention.is_reduced() {
        record.attention = reduce_attention(&record.attention, op).expect("per-head tensor");
    }
    record
}

//! Line-delimited JSON feedback datasets.
//!
//! ```text
//! {"kind":"pairwise","prompt":0,"chosen":[1,2],"rejected":[3]}
//! {"kind":"binary","prompt":1,"response":[2],"label":"desired"}
//! {"kind":"scalar","prompt":2,"response":[],"raw_score":4.5}
//! ```
//!
//! Token arrays hold response content; the terminator is implied (a single
//! trailing `0` is accepted and dropped).

use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use una_core::{FeedbackKind, FeedbackRecord, Label, Prompt, Response, ScoreBounds, TokenId};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct KindSummary {
    pub pairwise: usize,
    pub binary: usize,
    pub scalar: usize,
}

impl KindSummary {
    fn add(&mut self, kind: FeedbackKind) {
        match kind {
            FeedbackKind::Pairwise => self.pairwise += 1,
            FeedbackKind::Binary => self.binary += 1,
            FeedbackKind::Scalar => self.scalar += 1,
        }
    }

    /// The single kind present, if the dataset is not mixed.
    pub fn only_kind(&self) -> Option<FeedbackKind> {
        match (self.pairwise > 0, self.binary > 0, self.scalar > 0) {
            (true, false, false) => Some(FeedbackKind::Pairwise),
            (false, true, false) => Some(FeedbackKind::Binary),
            (false, false, true) => Some(FeedbackKind::Scalar),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<FeedbackRecord>,
    pub kind_summary: KindSummary,
    pub bounds: ScoreBounds,
    pub content_hash: u64,
}

impl Dataset {
    pub fn from_records(records: Vec<FeedbackRecord>, bounds: ScoreBounds) -> LabResult<Self> {
        if records.is_empty() {
            return Err(LabError::Invalid("dataset has no records".into()));
        }
        let mut kind_summary = KindSummary::default();
        for (i, r) in records.iter().enumerate() {
            if let FeedbackRecord::Scalar { raw_score, .. } = r {
                if bounds.check(*raw_score).is_err() {
                    return Err(LabError::OutOfRange { line: i + 1, value: *raw_score, min: bounds.min_raw(), max: bounds.max_raw() });
                }
            }
            kind_summary.add(r.kind());
        }
        let content_hash = content_hash(&records);
        Ok(Self { records, kind_summary, bounds, content_hash })
    }

    pub fn num_prompts(&self) -> usize {
        self.records.iter().map(|r| r.prompt().id + 1).max().unwrap_or(0)
    }

    /// Largest token id appearing in any response.
    pub fn max_token(&self) -> TokenId {
        self.records.iter().flat_map(|r| r.responses()).flat_map(|y| y.content().iter().copied()).max().unwrap_or(0)
    }

    /// Longest response content.
    pub fn max_len(&self) -> usize {
        self.records.iter().flat_map(|r| r.responses()).map(|y| y.content().len()).max().unwrap_or(0)
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.content_hash)
    }
}

/// Reads and validates a dataset file.
pub fn ingest(path: &Path, bounds: ScoreBounds) -> LabResult<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    if text.trim().is_empty() {
        return Err(LabError::EmptyFile(path.to_path_buf()));
    }
    parse_str(&text, bounds)
}

/// Parses line-delimited JSON; blank lines are skipped, line numbers are 1-based.
pub fn parse_str(text: &str, bounds: ScoreBounds) -> LabResult<Dataset> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_line(line, i + 1, bounds)?);
    }
    if records.is_empty() {
        return Err(LabError::EmptyFile("<input>".into()));
    }
    Dataset::from_records(records, bounds)
}

fn schema(line: usize, field: &str, message: impl Into<String>) -> LabError {
    LabError::Schema { line, field: field.into(), message: message.into() }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, line: usize) -> LabResult<&'a Value> {
    obj.get(name).ok_or_else(|| schema(line, name, "missing"))
}

fn prompt_field(obj: &Map<String, Value>, line: usize) -> LabResult<Prompt> {
    let v = field(obj, "prompt", line)?;
    let id = v.as_u64().ok_or_else(|| schema(line, "prompt", "expected a non-negative integer"))?;
    Ok(Prompt::new(id as usize))
}

fn response_field(obj: &Map<String, Value>, name: &str, line: usize) -> LabResult<Response> {
    let arr = field(obj, name, line)?.as_array().ok_or_else(|| schema(line, name, "expected an array of token ids"))?;
    let mut tokens = Vec::with_capacity(arr.len());
    for t in arr {
        let t = t.as_u64().filter(|&t| t <= u64::from(u32::MAX)).ok_or_else(|| schema(line, name, "token ids must be non-negative integers"))?;
        tokens.push(t as TokenId);
    }
    if tokens.last() == Some(&0) {
        tokens.pop();
    }
    Response::from_content(&tokens).map_err(|e| schema(line, name, e.to_string()))
}

fn parse_line(line: &str, n: usize, bounds: ScoreBounds) -> LabResult<FeedbackRecord> {
    let value: Value = serde_json::from_str(line).map_err(|e| LabError::Parse { line: n, message: e.to_string() })?;
    let obj = value.as_object().ok_or_else(|| schema(n, "<record>", "expected a JSON object"))?;
    let kind = field(obj, "kind", n)?.as_str().ok_or_else(|| schema(n, "kind", "expected a string"))?;
    let prompt = prompt_field(obj, n)?;
    let allowed: &[&str] = match kind {
        "pairwise" => &["kind", "prompt", "chosen", "rejected"],
        "binary" => &["kind", "prompt", "response", "label"],
        "scalar" => &["kind", "prompt", "response", "raw_score"],
        other => return Err(schema(n, "kind", format!("unknown kind `{other}`"))),
    };
    if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(schema(n, extra, "unknown field"));
    }
    match kind {
        "pairwise" => {
            let chosen = response_field(obj, "chosen", n)?;
            let rejected = response_field(obj, "rejected", n)?;
            FeedbackRecord::pairwise(prompt, chosen, rejected).map_err(|e| schema(n, "rejected", e.to_string()))
        }
        "binary" => {
            let response = response_field(obj, "response", n)?;
            let label = match field(obj, "label", n)?.as_str() {
                Some("desired") => Label::Desired,
                Some("undesired") => Label::Undesired,
                _ => return Err(schema(n, "label", "expected \"desired\" or \"undesired\"")),
            };
            Ok(FeedbackRecord::binary(prompt, response, label))
        }
        _ => {
            let response = response_field(obj, "response", n)?;
            let raw = field(obj, "raw_score", n)?.as_f64().ok_or_else(|| schema(n, "raw_score", "expected a number"))?;
            if bounds.check(raw).is_err() {
                return Err(LabError::OutOfRange { line: n, value: raw, min: bounds.min_raw(), max: bounds.max_raw() });
            }
            FeedbackRecord::scalar(prompt, response, raw).map_err(|e| schema(n, "raw_score", e.to_string()))
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum CanonicalRecord<'a> {
    Pairwise { prompt: usize, chosen: &'a [TokenId], rejected: &'a [TokenId] },
    Binary { prompt: usize, response: &'a [TokenId], label: &'static str },
    Scalar { prompt: usize, response: &'a [TokenId], raw_score: f64 },
}

fn canonical(r: &FeedbackRecord) -> CanonicalRecord<'_> {
    match r {
        FeedbackRecord::Pairwise { prompt, chosen, rejected } => CanonicalRecord::Pairwise { prompt: prompt.id, chosen: chosen.content(), rejected: rejected.content() },
        FeedbackRecord::Binary { prompt, response, label } => CanonicalRecord::Binary {
            prompt: prompt.id,
            response: response.content(),
            label: match label {
                Label::Desired => "desired",
                Label::Undesired => "undesired",
            },
        },
        FeedbackRecord::Scalar { prompt, response, raw_score } => CanonicalRecord::Scalar { prompt: prompt.id, response: response.content(), raw_score: *raw_score },
    }
}

/// Canonical line-delimited serialization (fixed key order, content tokens only).
pub fn to_jsonl(records: &[FeedbackRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&canonical(r)).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// First 8 bytes (big-endian) of SHA-256 over the canonical serialization.
pub fn content_hash(records: &[FeedbackRecord]) -> u64 {
    let digest = Sha256::digest(to_jsonl(records).as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(b)
}

/// Hash of arbitrary bytes with the same construction (used for non-dataset inputs).
pub fn bytes_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(b)
}

pub fn write_jsonl(path: &Path, records: &[FeedbackRecord]) -> LabResult<()> {
    std::fs::write(path, to_jsonl(records)).map_err(|e| LabError::io(path, e))
}

//! Policy checkpoints: a flat little-endian binary file plus a JSON mirror.
//!
//! Binary layout: `b"UNAP"`, version `u32`, kind tag `u8`, vocab size `u32`,
//! max_len `u32`, parameter count `u64`, then the parameters as `f64`.
//! The header carries no prompt count or layer sizes; those are read from
//! the JSON mirror (tabular checkpoints can also be decoded without it).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use una_core::{Architecture, Policy, PolicyKind, Vocab};

use crate::error::{LabError, LabResult};

pub const MAGIC: &[u8; 4] = b"UNAP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyJson {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_prompts: usize,
    pub hidden: usize,
    pub bias: bool,
    pub frozen: bool,
    pub params: Vec<f64>,
}

impl PolicyJson {
    pub fn from_policy(p: &Policy) -> Self {
        let (hidden, bias) = match p.arch() {
            Architecture::Tabular { .. } => (0, false),
            Architecture::Parametric { hidden, bias, .. } => (hidden, bias),
        };
        Self {
            format: "UNAP".into(),
            version: VERSION,
            kind: match p.kind() {
                PolicyKind::Tabular => "tabular".into(),
                PolicyKind::Parametric => "parametric".into(),
            },
            vocab_size: p.vocab().size(),
            max_len: p.vocab().max_len(),
            num_prompts: p.num_prompts(),
            hidden,
            bias,
            frozen: p.is_frozen(),
            params: p.params().to_vec(),
        }
    }

    pub fn to_policy(&self) -> LabResult<Policy> {
        let vocab = Vocab::new(self.vocab_size, self.max_len)?;
        let arch = match self.kind.as_str() {
            "tabular" => Architecture::Tabular { num_prompts: self.num_prompts },
            "parametric" => Architecture::Parametric { num_prompts: self.num_prompts, hidden: self.hidden, bias: self.bias },
            other => return Err(LabError::Invalid(format!("unknown policy kind `{other}`"))),
        };
        let p = Policy::new(arch, vocab, self.params.clone())?;
        Ok(if self.frozen { p.frozen_copy() } else { p })
    }
}

pub fn encode(p: &Policy) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * p.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(p.kind().tag());
    out.extend_from_slice(&(p.vocab().size() as u32).to_le_bytes());
    out.extend_from_slice(&(p.vocab().max_len() as u32).to_le_bytes());
    out.extend_from_slice(&(p.param_count() as u64).to_le_bytes());
    for v in p.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub kind: PolicyKind,
    pub vocab: Vocab,
    pub params: Vec<f64>,
}

pub fn decode(bytes: &[u8]) -> Result<Decoded, String> {
    if bytes.len() < HEADER_LEN {
        return Err("truncated header".into());
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let kind = PolicyKind::from_tag(bytes[8]).ok_or("unknown kind tag")?;
    let vocab = Vocab::new(u32_at(9) as usize, u32_at(13) as usize).map_err(|e| e.to_string())?;
    let count = u64::from_le_bytes(bytes[17..25].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count.checked_mul(8).ok_or("parameter count overflow")? {
        return Err(format!("expected {count} parameters, found {} bytes", body.len()));
    }
    let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Decoded { kind, vocab, params })
}

pub fn mirror_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the binary checkpoint and its JSON mirror; returns the mirror path.
pub fn save(path: &Path, p: &Policy) -> LabResult<PathBuf> {
    std::fs::write(path, encode(p)).map_err(|e| LabError::io(path, e))?;
    let mirror = mirror_path(path);
    let json = serde_json::to_string_pretty(&PolicyJson::from_policy(p)).expect("policy serializes");
    std::fs::write(&mirror, json + "\n").map_err(|e| LabError::io(&mirror, e))?;
    Ok(mirror)
}

/// Loads a checkpoint. The binary file is authoritative for parameters; the
/// mirror supplies the architecture and must agree with the binary header.
pub fn load(path: &Path) -> LabResult<Policy> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    let bad = |message: String| LabError::Checkpoint { path: path.to_path_buf(), message };
    let d = decode(&bytes).map_err(bad)?;
    let mirror = mirror_path(path);
    if mirror.exists() {
        let text = std::fs::read_to_string(&mirror).map_err(|e| LabError::io(&mirror, e))?;
        let j: PolicyJson = serde_json::from_str(&text).map_err(|e| bad(format!("mirror: {e}")))?;
        let from_mirror = j.to_policy()?;
        if from_mirror.kind() != d.kind || from_mirror.vocab() != d.vocab || from_mirror.params().len() != d.params.len() {
            return Err(bad("binary header and JSON mirror disagree".into()));
        }
        return from_mirror.with_params(d.params).map_err(Into::into);
    }
    match d.kind {
        PolicyKind::Tabular => {
            let n = d.vocab.space().len();
            if d.params.len() % n != 0 {
                return Err(bad("parameter count is not a multiple of the response-space size".into()));
            }
            Ok(Policy::tabular(d.vocab, d.params.len() / n, d.params)?)
        }
        PolicyKind::Parametric => Err(bad("parametric checkpoints need their JSON mirror".into())),
    }
}

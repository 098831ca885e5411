//! JSON documents for explicit reward models and tabular instances.

use std::path::Path;

use serde::{Deserialize, Serialize};
use una_core::{BtRewardModel, Response, RewardTable, TokenId};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub prompt: usize,
    pub tokens: Vec<TokenId>,
    pub reward: f64,
}

/// `{"entries": [{"prompt": id, "tokens": [...], "reward": float}, ...]}`;
/// `tokens` is response content without the terminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardTableJson {
    pub entries: Vec<RewardEntry>,
}

impl RewardTableJson {
    pub fn from_table(t: &RewardTable) -> Self {
        let entries = t
            .entries()
            .map(|(prompt, tokens, reward)| RewardEntry { prompt, tokens: tokens.strip_suffix(&[0]).unwrap_or(tokens).to_vec(), reward })
            .collect();
        Self { entries }
    }

    pub fn to_table(&self) -> LabResult<RewardTable> {
        let mut t = RewardTable::new();
        for e in &self.entries {
            let content = e.tokens.strip_suffix(&[0]).unwrap_or(&e.tokens);
            t.insert(e.prompt, &Response::from_content(content)?, e.reward)?;
        }
        Ok(t)
    }

    pub fn num_prompts(&self) -> usize {
        self.entries.iter().map(|e| e.prompt + 1).max().unwrap_or(0)
    }
}

pub fn load_reward_table(path: &Path) -> LabResult<(RewardTable, usize)> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let j: RewardTableJson = serde_json::from_str(&text).map_err(|e| LabError::Invalid(format!("{}: {e}", path.display())))?;
    if j.entries.is_empty() {
        return Err(LabError::EmptyFile(path.to_path_buf()));
    }
    Ok((j.to_table()?, j.num_prompts()))
}

pub fn save_reward_table(path: &Path, t: &RewardTable) -> LabResult<()> {
    let text = serde_json::to_string_pretty(&RewardTableJson::from_table(t)).expect("table serializes");
    std::fs::write(path, text + "\n").map_err(|e| LabError::io(path, e))
}

/// Trained Bradley-Terry weights, `params[prompt * vocab_size + token]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtModelJson {
    pub num_prompts: usize,
    pub vocab_size: usize,
    pub params: Vec<f64>,
}

impl BtModelJson {
    pub fn from_model(m: &BtRewardModel) -> Self {
        Self { num_prompts: m.num_prompts(), vocab_size: m.vocab_size(), params: m.params().to_vec() }
    }

    pub fn to_model(&self) -> LabResult<BtRewardModel> {
        Ok(BtRewardModel::with_params(self.num_prompts, self.vocab_size, self.params.clone())?)
    }
}

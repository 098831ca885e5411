//! Implicit rewards induced by a policy/reference pair, and explicit reward
//! models (fixed tables and a trainable Bradley-Terry model).

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::losses::{FeedbackRecord, LossResult};
use crate::math;
use crate::policy::{Policy, Prompt, Response, ResponseSpace, TokenId};

/// KL-penalty coefficient.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidBeta(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub(crate) fn check_pair(pi: &Policy, reference: &Policy) -> Result<()> {
    if !reference.is_frozen() {
        return Err(Error::NonFrozenReference);
    }
    if !pi.compatible(reference) {
        return Err(Error::VocabMismatch);
    }
    Ok(())
}

/// `β · log(π(y|x) / π_ref(y|x))`.
pub fn implicit_reward(pi: &Policy, reference: &Policy, beta: Beta, x: &Prompt, y: &Response) -> Result<f64> {
    check_pair(pi, reference)?;
    Ok(beta.value() * (pi.log_prob(x, y)? - reference.log_prob(x, y)?))
}

/// `σ(implicit_reward)`.
pub fn implicit_score(pi: &Policy, reference: &Policy, beta: Beta, x: &Prompt, y: &Response) -> Result<f64> {
    implicit_reward(pi, reference, beta, x, y).map(math::sigmoid)
}

/// Bradley-Terry preference probability `σ(r_w - r_l)`.
pub fn bt_probability(r_w: f64, r_l: f64) -> Result<f64> {
    if !(r_w.is_finite() && r_l.is_finite()) {
        return Err(Error::NonFiniteReward);
    }
    Ok(math::sigmoid(r_w - r_l))
}

/// Raw score range mapped affinely onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBounds {
    min_raw: f64,
    max_raw: f64,
}

impl ScoreBounds {
    pub fn new(min_raw: f64, max_raw: f64) -> Result<Self> {
        if min_raw.is_finite() && max_raw.is_finite() && max_raw > min_raw {
            Ok(Self { min_raw, max_raw })
        } else {
            Err(Error::InvalidBounds)
        }
    }

    pub fn min_raw(&self) -> f64 {
        self.min_raw
    }

    pub fn max_raw(&self) -> f64 {
        self.max_raw
    }

    pub fn check(&self, raw: f64) -> Result<()> {
        if raw >= self.min_raw && raw <= self.max_raw {
            Ok(())
        } else {
            Err(Error::OutOfRange { value: raw, min: self.min_raw, max: self.max_raw })
        }
    }
}

impl Default for ScoreBounds {
    fn default() -> Self {
        Self { min_raw: 1.0, max_raw: 5.0 }
    }
}

/// `(raw - min) / (max - min)`; out-of-range scores are rejected.
pub fn normalize_score(raw: f64, bounds: ScoreBounds) -> Result<f64> {
    bounds.check(raw)?;
    Ok((raw - bounds.min_raw) / (bounds.max_raw - bounds.min_raw))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardTable {
    entries: BTreeMap<(usize, Vec<TokenId>), f64>,
}

impl RewardTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tabulates `f` over every prompt in `0..num_prompts` and every response.
    pub fn from_fn(num_prompts: usize, space: &ResponseSpace, mut f: impl FnMut(usize, &Response) -> f64) -> Result<Self> {
        let mut table = Self::new();
        for p in 0..num_prompts {
            for y in space.iter() {
                let r = f(p, &y);
                table.insert(p, &y, r)?;
            }
        }
        Ok(table)
    }

    pub fn insert(&mut self, prompt: usize, y: &Response, reward: f64) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::NonFiniteReward);
        }
        self.entries.insert((prompt, y.tokens().to_vec()), reward);
        Ok(())
    }

    pub fn get(&self, prompt: usize, y: &Response) -> Result<f64> {
        self.entries
            .get(&(prompt, y.tokens().to_vec()))
            .copied()
            .ok_or(Error::MissingEntry { prompt })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in `(prompt, tokens)` order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &[TokenId], f64)> {
        self.entries.iter().map(|((p, t), &r)| (*p, t.as_slice(), r))
    }

    pub fn covers(&self, num_prompts: usize, space: &ResponseSpace) -> Result<()> {
        for p in 0..num_prompts {
            for y in space.iter() {
                self.get(p, &y)?;
            }
        }
        Ok(())
    }
}

/// Linear Bradley-Terry reward over `prompt one-hot ⊗ bag of content tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct BtRewardModel {
    num_prompts: usize,
    vocab_size: usize,
    params: Vec<f64>,
}

impl BtRewardModel {
    pub fn zeros(num_prompts: usize, vocab_size: usize) -> Self {
        Self { num_prompts, vocab_size, params: vec![0.0; num_prompts * vocab_size] }
    }

    pub fn with_params(num_prompts: usize, vocab_size: usize, params: Vec<f64>) -> Result<Self> {
        let expected = num_prompts * vocab_size;
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: params.len() });
        }
        Ok(Self { num_prompts, vocab_size, params })
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn feature_indices<'a>(&self, x: &Prompt, y: &'a Response) -> Result<impl Iterator<Item = usize> + 'a> {
        if x.id >= self.num_prompts {
            return Err(Error::MissingEntry { prompt: x.id });
        }
        if y.content().iter().any(|&t| t as usize >= self.vocab_size) {
            return Err(Error::MalformedResponse("token out of vocabulary range"));
        }
        let base = x.id * self.vocab_size;
        Ok(y.content().iter().map(move |&t| base + t as usize))
    }

    pub fn reward(&self, x: &Prompt, y: &Response) -> Result<f64> {
        Ok(self.feature_indices(x, y)?.map(|i| self.params[i]).sum())
    }

    fn accumulate_grad(&self, x: &Prompt, y: &Response, scale: f64, grad: &mut [f64]) -> Result<()> {
        for i in self.feature_indices(x, y)? {
            grad[i] += scale;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExplicitRewardModel {
    Table(RewardTable),
    TrainableBt(BtRewardModel),
}

impl ExplicitRewardModel {
    pub fn is_trainable(&self) -> bool {
        matches!(self, ExplicitRewardModel::TrainableBt(_))
    }

    pub fn params(&self) -> &[f64] {
        match self {
            ExplicitRewardModel::Table(_) => &[],
            ExplicitRewardModel::TrainableBt(m) => m.params(),
        }
    }

    /// Gradient step on a trainable model.
    pub fn apply_gradient(&self, grad: &[f64], step_size: f64) -> Result<Self> {
        let ExplicitRewardModel::TrainableBt(m) = self else {
            return Err(Error::NonTrainableModel);
        };
        if grad.len() != m.params.len() {
            return Err(Error::DimensionMismatch { expected: m.params.len(), found: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        let params = m.params.iter().zip(grad).map(|(p, g)| p - step_size * g).collect();
        Ok(ExplicitRewardModel::TrainableBt(BtRewardModel { params, ..m.clone() }))
    }

    /// Pairwise accuracy: fraction of records with positive margin.
    pub fn pairwise_accuracy(&self, batch: &[FeedbackRecord]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut correct = 0usize;
        for rec in batch {
            let FeedbackRecord::Pairwise { prompt, chosen, rejected } = rec else {
                return Err(Error::WrongFeedbackKind);
            };
            if explicit_reward(self, prompt, chosen)? > explicit_reward(self, prompt, rejected)? {
                correct += 1;
            }
        }
        Ok(correct as f64 / batch.len() as f64)
    }
}

/// `r_φ(x, y)`.
pub fn explicit_reward(rm: &ExplicitRewardModel, x: &Prompt, y: &Response) -> Result<f64> {
    match rm {
        ExplicitRewardModel::Table(t) => t.get(x.id, y),
        ExplicitRewardModel::TrainableBt(m) => m.reward(x, y),
    }
}

/// Bradley-Terry cross-entropy `-mean log σ(r_φ(x,y_w) - r_φ(x,y_l))` and its
/// gradient with respect to the reward-model parameters.
pub fn rm_loss(rm: &ExplicitRewardModel, batch: &[FeedbackRecord]) -> Result<LossResult> {
    let ExplicitRewardModel::TrainableBt(m) = rm else {
        return Err(Error::NonTrainableModel);
    };
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; m.params.len()];
    let mut per_record = Vec::with_capacity(batch.len());
    for rec in batch {
        let FeedbackRecord::Pairwise { prompt, chosen, rejected } = rec else {
            return Err(Error::WrongFeedbackKind);
        };
        let margin = m.reward(prompt, chosen)? - m.reward(prompt, rejected)?;
        per_record.push(-math::log_sigmoid(margin));
        let coeff = -math::sigmoid(-margin) / n;
        m.accumulate_grad(prompt, chosen, coeff, &mut grad)?;
        m.accumulate_grad(prompt, rejected, -coeff, &mut grad)?;
    }
    Ok(LossResult::from_parts(per_record, grad))
}

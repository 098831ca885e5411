//! Seeded problem instances shared by the tests, the acceptance suite and the CLI.

use alloc::vec::Vec;

use crate::error::Result;
use crate::losses::{FeedbackRecord, Label};
use crate::math;
use crate::oracle::TabularInstance;
use crate::policy::{Policy, Prompt, Response, TokenId, Vocab};
use crate::reward::{Beta, RewardTable};
use crate::rng::CounterRng;

/// A dataset together with the policies it is meant to be trained from.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineInstance {
    pub vocab: Vocab,
    pub num_prompts: usize,
    /// Frozen reference.
    pub reference: Policy,
    /// Trainable starting point (a copy of the reference).
    pub start: Policy,
    pub records: Vec<FeedbackRecord>,
}

impl OfflineInstance {
    fn new(vocab: Vocab, num_prompts: usize, reference: Policy, records: Vec<FeedbackRecord>) -> Self {
        let reference = reference.frozen_copy();
        let start = reference.trainable_copy();
        Self { vocab, num_prompts, reference, start, records }
    }

    pub fn prompts(&self) -> Vec<Prompt> {
        (0..self.num_prompts).map(Prompt::new).collect()
    }
}

/// 4 prompts, 4 responses per prompt, a seeded total order per prompt and
/// every ordered pair of it as a preference record (24 records).
pub fn separable_four(seed: u64) -> Result<OfflineInstance> {
    let vocab = Vocab::new(4, 1)?;
    let space = vocab.space();
    let mut rng = CounterRng::new(seed);
    let mut records = Vec::new();
    for x in 0..4 {
        let mut order: Vec<usize> = (0..space.len()).collect();
        rng.shuffle(&mut order);
        for i in 0..order.len() {
            for j in i + 1..order.len() {
                records.push(FeedbackRecord::pairwise(Prompt::new(x), space.response(order[i]), space.response(order[j]))?);
            }
        }
    }
    let reference = Policy::tabular_random(vocab, 4, 0.5, seed ^ 0x0052_4546)?;
    Ok(OfflineInstance::new(vocab, 4, reference, records))
}

/// Explicit reward 1 for any response containing token 3, else 0, over a
/// 5-token vocabulary with responses up to 2 tokens (21 responses, 4 prompts).
/// Reference logits are `N(0, 0.5²)` with `token3_shift` subtracted from
/// every response containing token 3.
pub fn prefer_token_three_with(beta: Beta, token3_shift: f64) -> Result<TabularInstance> {
    let vocab = Vocab::new(5, 2)?;
    let base = Policy::tabular_random(vocab, 4, 0.5, 33)?;
    let space = vocab.space();
    let logits = base.params().iter().enumerate().map(|(i, &l)| if space.response(i % space.len()).contains(3) { l - token3_shift } else { l }).collect();
    let reference = Policy::tabular(vocab, 4, logits)?.frozen_copy();
    let rewards = RewardTable::from_fn(4, &vocab.space(), |_, y| if y.contains(3) { 1.0 } else { 0.0 })?;
    TabularInstance::new(reference, rewards, beta)
}

pub fn prefer_token_three(beta: Beta) -> Result<TabularInstance> {
    prefer_token_three_with(beta, PREFER_TOKEN_THREE_SHIFT)
}

/// Makes token 3 uncommon under the reference (about 12% of its mass).
pub const PREFER_TOKEN_THREE_SHIFT: f64 = 1.5;

/// Random instance with 4 prompts and 16 responses (`|V| = 16`, length ≤ 1):
/// reference logits `N(0, 0.5²)`, rewards uniform in `[-0.25, 0.25]`.
pub fn random_sixteen(seed: u64, beta: Beta) -> Result<TabularInstance> {
    TabularInstance::random(seed, 4, Vocab::new(16, 1)?, beta, 0.5, 0.25)
}

/// Binary feedback over 4 prompts and 4 responses: one desired and one
/// undesired response per prompt. The reference puts little mass
/// (logit `-3/β`) on each desired response so that `s_θ` can exceed 0.9.
pub fn binary_feedback(seed: u64, beta: Beta, desired_only: bool) -> Result<OfflineInstance> {
    let vocab = Vocab::new(4, 1)?;
    let space = vocab.space();
    let n = space.len();
    let mut rng = CounterRng::new(seed);
    let mut logits = Vec::with_capacity(4 * n);
    let mut records = Vec::new();
    for x in 0..4 {
        let desired = rng.below(n);
        let undesired = (desired + 1 + rng.below(n - 1)) % n;
        for i in 0..n {
            let base = 0.5 * rng.normal();
            logits.push(if i == desired { base - 3.0 / beta.value() } else { base });
        }
        records.push(FeedbackRecord::binary(Prompt::new(x), space.response(desired), Label::Desired));
        if !desired_only {
            records.push(FeedbackRecord::binary(Prompt::new(x), space.response(undesired), Label::Undesired));
        }
    }
    let reference = Policy::tabular(vocab, 4, logits)?;
    Ok(OfflineInstance::new(vocab, 4, reference, records))
}

/// Scalar feedback generated by a hidden target policy: every response of
/// every prompt is scored `1 + 4 σ(β log(π_t/π_ref))`, so the target attains
/// zero score-distillation loss.
pub fn realizable_scalar(seed: u64, beta: Beta) -> Result<OfflineInstance> {
    let vocab = Vocab::new(4, 1)?;
    let reference = Policy::tabular_random(vocab, 4, 0.5, seed)?;
    let target = Policy::tabular_random(vocab, 4, 0.5, seed ^ 0x7461_7267)?;
    let mut records = Vec::new();
    for x in (0..4).map(Prompt::new) {
        for y in vocab.space().iter() {
            let r = beta.value() * (target.log_prob(&x, &y)? - reference.log_prob(&x, &y)?);
            records.push(FeedbackRecord::scalar(x.clone(), y, 1.0 + 4.0 * math::sigmoid(r))?);
        }
    }
    Ok(OfflineInstance::new(vocab, 4, reference, records))
}

/// Preference pairs labelled by a hidden linear Bradley-Terry reward over
/// `prompt ⊗ token-count` features, hence linearly separable.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSet {
    pub num_prompts: usize,
    pub vocab_size: usize,
    pub records: Vec<FeedbackRecord>,
}

pub fn separable_preferences(seed: u64, count: usize) -> Result<PreferenceSet> {
    let num_prompts = 4;
    let vocab = Vocab::new(6, 3)?;
    let space = vocab.space();
    let mut rng = CounterRng::new(seed);
    let weights: Vec<f64> = (0..num_prompts * vocab.size()).map(|_| rng.normal()).collect();
    let true_reward = |x: usize, y: &Response| -> f64 { y.content().iter().map(|&t| weights[x * vocab.size() + t as usize]).sum() };
    let mut records = Vec::with_capacity(count);
    while records.len() < count {
        let x = rng.below(num_prompts);
        let a = space.response(rng.below(space.len()));
        let b = space.response(rng.below(space.len()));
        let (ra, rb) = (true_reward(x, &a), true_reward(x, &b));
        if (ra - rb).abs() < 1e-3 {
            continue;
        }
        let (w, l) = if ra > rb { (a, b) } else { (b, a) };
        records.push(FeedbackRecord::pairwise(Prompt::new(x), w, l)?);
    }
    Ok(PreferenceSet { num_prompts, vocab_size: vocab.size(), records })
}

/// Swaps chosen and rejected on every pairwise record.
pub fn swap_labels(records: &[FeedbackRecord]) -> Vec<FeedbackRecord> {
    records
        .iter()
        .map(|r| match r {
            FeedbackRecord::Pairwise { prompt, chosen, rejected } => {
                FeedbackRecord::Pairwise { prompt: prompt.clone(), chosen: rejected.clone(), rejected: chosen.clone() }
            }
            other => other.clone(),
        })
        .collect()
}

/// Random pairwise batch over a policy's response space (chosen ≠ rejected).
pub fn random_pairwise_batch(vocab: Vocab, num_prompts: usize, size: usize, rng: &mut CounterRng) -> Result<Vec<FeedbackRecord>> {
    let space = vocab.space();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let a = rng.below(space.len());
        let b = rng.below(space.len());
        if a != b {
            out.push(FeedbackRecord::pairwise(Prompt::new(rng.below(num_prompts)), space.response(a), space.response(b))?);
        }
    }
    Ok(out)
}

/// Random binary batch with alternating labels.
pub fn random_binary_batch(vocab: Vocab, num_prompts: usize, size: usize, rng: &mut CounterRng) -> Vec<FeedbackRecord> {
    let space = vocab.space();
    (0..size)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Desired } else { Label::Undesired };
            FeedbackRecord::binary(Prompt::new(rng.below(num_prompts)), space.response(rng.below(space.len())), label)
        })
        .collect()
}

/// Random scalar batch with raw scores uniform in `[1, 5]`.
pub fn random_scalar_batch(vocab: Vocab, num_prompts: usize, size: usize, rng: &mut CounterRng) -> Result<Vec<FeedbackRecord>> {
    let space = vocab.space();
    (0..size)
        .map(|_| {
            let y = space.response(rng.below(space.len()));
            FeedbackRecord::scalar(Prompt::new(rng.below(num_prompts)), y, rng.uniform(1.0, 5.0))
        })
        .collect()
}

/// Random sampled `(prompt, response)` list for online-loss checks.
pub fn random_samples(vocab: Vocab, num_prompts: usize, size: usize, rng: &mut CounterRng) -> Vec<(Prompt, Response)> {
    let space = vocab.space();
    (0..size).map(|_| (Prompt::new(rng.below(num_prompts)), space.response(rng.below(space.len())))).collect()
}

/// Response made of `content` followed by the terminator.
pub fn response(content: &[TokenId]) -> Result<Response> {
    Response::from_content(content)
}

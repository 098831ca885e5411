//! Alignment losses as differentiable functions of the trainable policy.
//!
//! Every loss is an index-ordered mean over records of a per-record term that
//! depends on the policy only through implicit rewards
//! `r_θ = β (log π_θ - log π_ref)`, so its gradient is a weighted sum of
//! `β ∇ log π_θ(y|x)` terms. Responses passed in (dataset or freshly sampled)
//! are treated as constants.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::policy::{Policy, Prompt, Response};
use crate::reward::{check_pair, explicit_reward, normalize_score, Beta, ExplicitRewardModel, ScoreBounds};

/// Lower/upper clamp applied to `s_θ` before taking logs in BCE.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Desired,
    Undesired,
}

impl Label {
    /// Explicit score assigned to the label: 1 for desired, 0 for undesired.
    pub fn score(self) -> f64 {
        match self {
            Label::Desired => 1.0,
            Label::Undesired => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeedbackKind {
    Pairwise,
    Binary,
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackRecord {
    Pairwise { prompt: Prompt, chosen: Response, rejected: Response },
    Binary { prompt: Prompt, response: Response, label: Label },
    Scalar { prompt: Prompt, response: Response, raw_score: f64 },
}

impl FeedbackRecord {
    pub fn pairwise(prompt: Prompt, chosen: Response, rejected: Response) -> Result<Self> {
        if chosen == rejected {
            return Err(Error::InvalidRecord("chosen and rejected responses are identical"));
        }
        Ok(FeedbackRecord::Pairwise { prompt, chosen, rejected })
    }

    pub fn binary(prompt: Prompt, response: Response, label: Label) -> Self {
        FeedbackRecord::Binary { prompt, response, label }
    }

    pub fn scalar(prompt: Prompt, response: Response, raw_score: f64) -> Result<Self> {
        if !raw_score.is_finite() {
            return Err(Error::InvalidRecord("raw score is not finite"));
        }
        Ok(FeedbackRecord::Scalar { prompt, response, raw_score })
    }

    pub fn kind(&self) -> FeedbackKind {
        match self {
            FeedbackRecord::Pairwise { .. } => FeedbackKind::Pairwise,
            FeedbackRecord::Binary { .. } => FeedbackKind::Binary,
            FeedbackRecord::Scalar { .. } => FeedbackKind::Scalar,
        }
    }

    pub fn prompt(&self) -> &Prompt {
        match self {
            FeedbackRecord::Pairwise { prompt, .. } | FeedbackRecord::Binary { prompt, .. } | FeedbackRecord::Scalar { prompt, .. } => prompt,
        }
    }

    /// Responses carried by the record.
    pub fn responses(&self) -> Vec<&Response> {
        match self {
            FeedbackRecord::Pairwise { chosen, rejected, .. } => vec![chosen, rejected],
            FeedbackRecord::Binary { response, .. } | FeedbackRecord::Scalar { response, .. } => vec![response],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
    pub per_record: Vec<f64>,
}

impl LossResult {
    /// `grad` must already be divided by the batch size.
    pub fn from_parts(per_record: Vec<f64>, grad: Vec<f64>) -> Self {
        let value = per_record.iter().sum::<f64>() / per_record.len() as f64;
        Self { value, grad, per_record }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferenceLoss {
    Mse,
    Bce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompareAs {
    RewardMse,
    #[default]
    ScoreMse,
}

/// Shared evaluation of implicit rewards and their gradients.
struct Implicit<'a> {
    pi: &'a Policy,
    reference: &'a Policy,
    beta: f64,
    grad: Vec<f64>,
}

impl<'a> Implicit<'a> {
    fn new(pi: &'a Policy, reference: &'a Policy, beta: Beta) -> Result<Self> {
        check_pair(pi, reference)?;
        Ok(Self { pi, reference, beta: beta.value(), grad: vec![0.0; pi.param_count()] })
    }

    fn log_ratio(&self, x: &Prompt, y: &Response) -> Result<f64> {
        Ok(self.pi.log_prob(x, y)? - self.reference.log_prob(x, y)?)
    }

    fn reward(&self, x: &Prompt, y: &Response) -> Result<f64> {
        Ok(self.beta * self.log_ratio(x, y)?)
    }

    /// Adds `coeff * ∇ r_θ(x, y)`.
    fn push(&mut self, x: &Prompt, y: &Response, coeff: f64) -> Result<()> {
        if coeff != 0.0 {
            self.pi.accumulate_log_prob_grad(x, y, coeff * self.beta, &mut self.grad)?;
        }
        Ok(())
    }
}

fn non_empty<T>(batch: &[T]) -> Result<f64> {
    if batch.is_empty() {
        Err(Error::EmptyBatch)
    } else {
        Ok(batch.len() as f64)
    }
}

/// Pairwise implicit-reward margin loss.
///
/// `shaped == false`: `-mean(r_θ(x,y_w) - r_θ(x,y_l))` (unbounded below).
/// `shaped == true`: `-mean log σ(r_θ(x,y_w) - r_θ(x,y_l))`.
pub fn loss_una_pair(pi: &Policy, reference: &Policy, beta: Beta, batch: &[FeedbackRecord], shaped: bool) -> Result<LossResult> {
    let n = non_empty(batch)?;
    let mut ev = Implicit::new(pi, reference, beta)?;
    let mut per_record = Vec::with_capacity(batch.len());
    for rec in batch {
        let FeedbackRecord::Pairwise { prompt, chosen, rejected } = rec else {
            return Err(Error::WrongFeedbackKind);
        };
        let margin = ev.reward(prompt, chosen)? - ev.reward(prompt, rejected)?;
        let (loss, dmargin) = if shaped { (-math::log_sigmoid(margin), -math::sigmoid(-margin)) } else { (-margin, -1.0) };
        per_record.push(loss);
        ev.push(prompt, chosen, dmargin / n)?;
        ev.push(prompt, rejected, -dmargin / n)?;
    }
    Ok(LossResult::from_parts(per_record, ev.grad))
}

/// DPO: `-mean log σ(β log(π(y_w)/π_ref(y_w)) - β log(π(y_l)/π_ref(y_l)))`.
pub fn loss_dpo(pi: &Policy, reference: &Policy, beta: Beta, batch: &[FeedbackRecord]) -> Result<LossResult> {
    let n = non_empty(batch)?;
    check_pair(pi, reference)?;
    let b = beta.value();
    let mut grad = vec![0.0; pi.param_count()];
    let mut per_record = Vec::with_capacity(batch.len());
    for rec in batch {
        let FeedbackRecord::Pairwise { prompt, chosen, rejected } = rec else {
            return Err(Error::WrongFeedbackKind);
        };
        let w = pi.log_prob(prompt, chosen)? - reference.log_prob(prompt, chosen)?;
        let l = pi.log_prob(prompt, rejected)? - reference.log_prob(prompt, rejected)?;
        let z = b * w - b * l;
        per_record.push(-math::log_sigmoid(z));
        let coeff = -b * math::sigmoid(-z) / n;
        pi.accumulate_log_prob_grad(prompt, chosen, coeff, &mut grad)?;
        pi.accumulate_log_prob_grad(prompt, rejected, -coeff, &mut grad)?;
    }
    Ok(LossResult::from_parts(per_record, grad))
}

/// Per-record `(loss, dloss/ds)` of the difference measure between an implicit
/// score `s` and an explicit score `target`. BCE clamps `s` into
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`; the clamp has zero derivative where active.
fn difference(g: DifferenceLoss, s: f64, target: f64) -> (f64, f64) {
    match g {
        DifferenceLoss::Mse => ((s - target) * (s - target), 2.0 * (s - target)),
        DifferenceLoss::Bce => {
            let sc = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let loss = -(target * math::ln(sc) + (1.0 - target) * math::ln(1.0 - sc));
            let dsc = -target / sc + (1.0 - target) / (1.0 - sc);
            (loss, if sc == s { dsc } else { 0.0 })
        }
    }
}

/// Binary feedback: explicit score 1 for desired, 0 for undesired, compared
/// against `s_θ = σ(r_θ)` with MSE or BCE.
pub fn loss_una_binary(pi: &Policy, reference: &Policy, beta: Beta, batch: &[FeedbackRecord], g: DifferenceLoss) -> Result<LossResult> {
    let n = non_empty(batch)?;
    let mut ev = Implicit::new(pi, reference, beta)?;
    let mut per_record = Vec::with_capacity(batch.len());
    for rec in batch {
        let FeedbackRecord::Binary { prompt, response, label } = rec else {
            return Err(Error::WrongFeedbackKind);
        };
        let s = math::sigmoid(ev.reward(prompt, response)?);
        let (loss, ds) = difference(g, s, label.score());
        per_record.push(loss);
        ev.push(prompt, response, ds * s * (1.0 - s) / n)?;
    }
    Ok(LossResult::from_parts(per_record, ev.grad))
}

/// Score distillation: MSE between `s_θ` and the normalized raw score.
pub fn loss_una_score(pi: &Policy, reference: &Policy, beta: Beta, batch: &[FeedbackRecord], bounds: ScoreBounds) -> Result<LossResult> {
    let n = non_empty(batch)?;
    let mut ev = Implicit::new(pi, reference, beta)?;
    let mut per_record = Vec::with_capacity(batch.len());
    for rec in batch {
        let FeedbackRecord::Scalar { prompt, response, raw_score } = rec else {
            return Err(Error::WrongFeedbackKind);
        };
        let target = normalize_score(*raw_score, bounds)?;
        let s = math::sigmoid(ev.reward(prompt, response)?);
        let (loss, ds) = difference(DifferenceLoss::Mse, s, target);
        per_record.push(loss);
        ev.push(prompt, response, ds * s * (1.0 - s) / n)?;
    }
    Ok(LossResult::from_parts(per_record, ev.grad))
}

/// Online difference minimization against an explicit reward model over
/// already-sampled `(prompt, response)` pairs.
///
/// `RewardMse`: `mean (r_θ - r_φ)^2`; `ScoreMse`: `mean (s_θ - σ(r_φ))^2`.
pub fn loss_una_online(
    pi: &Policy,
    reference: &Policy,
    beta: Beta,
    rm: &ExplicitRewardModel,
    sampled: &[(Prompt, Response)],
    compare_as: CompareAs,
) -> Result<LossResult> {
    let n = non_empty(sampled)?;
    let mut ev = Implicit::new(pi, reference, beta)?;
    let mut per_record = Vec::with_capacity(sampled.len());
    for (x, y) in sampled {
        let r_phi = explicit_reward(rm, x, y)?;
        let r = ev.reward(x, y)?;
        let (loss, dr) = online_term(compare_as, r, r_phi);
        per_record.push(loss);
        ev.push(x, y, dr / n)?;
    }
    Ok(LossResult::from_parts(per_record, ev.grad))
}

/// `(loss, dloss/dr_θ)` of one online comparison.
pub(crate) fn online_term(compare_as: CompareAs, r_theta: f64, r_phi: f64) -> (f64, f64) {
    match compare_as {
        CompareAs::RewardMse => {
            let d = r_theta - r_phi;
            (d * d, 2.0 * d)
        }
        CompareAs::ScoreMse => {
            let s = math::sigmoid(r_theta);
            let d = s - math::sigmoid(r_phi);
            (d * d, 2.0 * d * s * (1.0 - s))
        }
    }
}

//! Training loops: offline (dataset-driven), online (sample, score with an
//! explicit reward model, minimize the implicit/explicit difference), a
//! KL-penalized policy-gradient baseline, and Bradley-Terry reward-model fitting.
//!
//! All loops are plain gradient descent with an optional global norm cap and
//! are fully deterministic in `(config, data, seed)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::losses::{self, CompareAs, DifferenceLoss, FeedbackKind, FeedbackRecord, LossResult};
use crate::math;
use crate::policy::{Policy, Prompt, Response};
use crate::reward::{explicit_reward, rm_loss, Beta, ExplicitRewardModel, ScoreBounds};
use crate::rng::{derive_key, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    UnaPairShaped,
    UnaPairUnshaped,
    Dpo,
    UnaBinaryMse,
    UnaBinaryBce,
    UnaScore,
    UnaOnlineReward,
    UnaOnlineScore,
    PgBaseline,
    RmBt,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::UnaPairShaped,
        LossKind::UnaPairUnshaped,
        LossKind::Dpo,
        LossKind::UnaBinaryMse,
        LossKind::UnaBinaryBce,
        LossKind::UnaScore,
        LossKind::UnaOnlineReward,
        LossKind::UnaOnlineScore,
        LossKind::PgBaseline,
        LossKind::RmBt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::UnaPairShaped => "una_pair_shaped",
            LossKind::UnaPairUnshaped => "una_pair_unshaped",
            LossKind::Dpo => "dpo",
            LossKind::UnaBinaryMse => "una_binary_mse",
            LossKind::UnaBinaryBce => "una_binary_bce",
            LossKind::UnaScore => "una_score",
            LossKind::UnaOnlineReward => "una_online_reward",
            LossKind::UnaOnlineScore => "una_online_score",
            LossKind::PgBaseline => "pg_baseline",
            LossKind::RmBt => "rm_bt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Dataset record kind consumed by this loss; `None` for online losses.
    pub fn feedback_kind(self) -> Option<FeedbackKind> {
        match self {
            LossKind::UnaPairShaped | LossKind::UnaPairUnshaped | LossKind::Dpo | LossKind::RmBt => Some(FeedbackKind::Pairwise),
            LossKind::UnaBinaryMse | LossKind::UnaBinaryBce => Some(FeedbackKind::Binary),
            LossKind::UnaScore => Some(FeedbackKind::Scalar),
            LossKind::UnaOnlineReward | LossKind::UnaOnlineScore | LossKind::PgBaseline => None,
        }
    }

    pub fn is_online(self) -> bool {
        matches!(self, LossKind::UnaOnlineReward | LossKind::UnaOnlineScore | LossKind::PgBaseline)
    }
}

impl core::fmt::Display for LossKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub beta: Beta,
    pub step_size: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Comparison used by online UNA; the `una_online_*` loss kinds fix it.
    pub compare_as: CompareAs,
    pub grad_norm_cap: Option<f64>,
    pub eval_every: usize,
    pub score_bounds: ScoreBounds,
    /// Policy-gradient baseline uses the exact expectation instead of sampling.
    pub pg_exact: bool,
    /// Independent gradient estimates drawn at each eval to measure variance
    /// (online trainers only; 0 disables).
    pub variance_probe: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: Beta::new(0.03).expect("valid default"),
            step_size: 0.05,
            steps: 1000,
            batch_size: 16,
            seed: 0,
            loss_kind: LossKind::UnaPairShaped,
            compare_as: CompareAs::ScoreMse,
            grad_norm_cap: Some(10.0),
            eval_every: 10,
            score_bounds: ScoreBounds::default(),
            pg_exact: false,
            variance_probe: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("step_size must be finite and non-negative"));
        }
        if let Some(c) = self.grad_norm_cap {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig("grad_norm_cap must be positive"));
            }
        }
        Ok(())
    }

    /// Comparison actually used by the online trainer.
    pub fn effective_compare(&self) -> CompareAs {
        match self.loss_kind {
            LossKind::UnaOnlineReward => CompareAs::RewardMse,
            LossKind::UnaOnlineScore => CompareAs::ScoreMse,
            _ => self.compare_as,
        }
    }

    /// Steps at which an eval record is emitted: 0, every `eval_every`, and the last.
    pub fn eval_steps(&self) -> Vec<usize> {
        (0..=self.steps).filter(|&s| s % self.eval_every == 0 || s == self.steps).collect()
    }
}

/// One row of the metrics stream. Undefined quantities are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub loss: f64,
    pub kl: f64,
    pub mean_r_theta_w: f64,
    pub mean_r_theta_l: f64,
    pub mean_s_theta_w: f64,
    pub mean_s_theta_l: f64,
    pub mean_explicit_reward: f64,
    pub ms: u64,
    /// Pairwise accuracy of the reward model (reward-model training only).
    pub accuracy: f64,
    /// Mean per-coordinate variance of the stochastic gradient estimate.
    pub grad_variance: f64,
}

impl EvalRecord {
    fn blank(step: usize) -> Self {
        let nan = f64::NAN;
        Self {
            step,
            loss: nan,
            kl: nan,
            mean_r_theta_w: nan,
            mean_r_theta_l: nan,
            mean_s_theta_w: nan,
            mean_s_theta_l: nan,
            mean_explicit_reward: nan,
            ms: 0,
            accuracy: nan,
            grad_variance: nan,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EvalRecord>,
    pub final_policy: Option<Policy>,
}

impl TrainReport {
    pub fn last(&self) -> &EvalRecord {
        self.records.last().expect("at least one record")
    }

    pub fn first(&self) -> &EvalRecord {
        &self.records[0]
    }

    /// Mean of the recorded gradient variances, ignoring `NaN`.
    pub fn mean_grad_variance(&self) -> f64 {
        let v: Vec<f64> = self.records.iter().map(|r| r.grad_variance).filter(|v| !v.is_nan()).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

/// Hook invoked for every eval record before it is stored; the std side uses
/// it to stamp wall-clock time and stream rows.
pub trait EvalObserver {
    fn on_eval(&mut self, _record: &mut EvalRecord) {}
    /// Current policy at each eval step (policy trainers only).
    fn on_policy(&mut self, _step: usize, _policy: &Policy) {}
}

impl EvalObserver for () {}

fn cap(mut grad: Vec<f64>, cap: Option<f64>) -> Vec<f64> {
    if let Some(c) = cap {
        let n = math::l2_norm(&grad);
        if n > c {
            let k = c / n;
            grad.iter_mut().for_each(|g| *g *= k);
        }
    }
    grad
}

fn check_start(pi0: &Policy, reference: &Policy) -> Result<()> {
    if pi0.is_frozen() {
        return Err(Error::FrozenPolicy);
    }
    if !reference.is_frozen() {
        return Err(Error::NonFrozenReference);
    }
    if !pi0.compatible(reference) {
        return Err(Error::VocabMismatch);
    }
    Ok(())
}

fn mean_kl(pi: &Policy, reference: &Policy, prompts: &[Prompt]) -> Result<f64> {
    let mut total = 0.0;
    for x in prompts {
        total += pi.kl_divergence(reference, x)?.max(0.0);
    }
    Ok(total / prompts.len() as f64)
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Epoch-wise shuffled minibatches without replacement.
struct Minibatches {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    rng: CounterRng,
}

impl Minibatches {
    fn new(n: usize, seed: u64) -> Self {
        Self { n, order: Vec::new(), pos: n, rng: CounterRng::new(derive_key(seed, 0x4d49_4e49)) }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        if size >= self.n {
            return (0..self.n).collect();
        }
        if self.pos >= self.n {
            self.order = (0..self.n).collect();
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

fn offline_loss(kind: LossKind, pi: &Policy, reference: &Policy, cfg: &TrainConfig, batch: &[FeedbackRecord]) -> Result<LossResult> {
    let b = cfg.beta;
    match kind {
        LossKind::UnaPairShaped => losses::loss_una_pair(pi, reference, b, batch, true),
        LossKind::UnaPairUnshaped => losses::loss_una_pair(pi, reference, b, batch, false),
        LossKind::Dpo => losses::loss_dpo(pi, reference, b, batch),
        LossKind::UnaBinaryMse => losses::loss_una_binary(pi, reference, b, batch, DifferenceLoss::Mse),
        LossKind::UnaBinaryBce => losses::loss_una_binary(pi, reference, b, batch, DifferenceLoss::Bce),
        LossKind::UnaScore => losses::loss_una_score(pi, reference, b, batch, cfg.score_bounds),
        _ => Err(Error::KindMismatch),
    }
}

fn offline_record(step: usize, pi: &Policy, reference: &Policy, cfg: &TrainConfig, data: &[FeedbackRecord], prompts: &[Prompt]) -> Result<EvalRecord> {
    let mut rec = EvalRecord::blank(step);
    rec.loss = offline_loss(cfg.loss_kind, pi, reference, cfg, data)?.value;
    rec.kl = mean_kl(pi, reference, prompts)?;
    let r = |x: &Prompt, y: &Response| -> Result<f64> { Ok(cfg.beta.value() * (pi.log_prob(x, y)? - reference.log_prob(x, y)?)) };
    let (mut w, mut l) = (Vec::new(), Vec::new());
    for d in data {
        match d {
            FeedbackRecord::Pairwise { prompt, chosen, rejected } => {
                w.push(r(prompt, chosen)?);
                l.push(r(prompt, rejected)?);
            }
            FeedbackRecord::Binary { prompt, response, label } => {
                let v = r(prompt, response)?;
                if label.score() > 0.5 {
                    w.push(v)
                } else {
                    l.push(v)
                }
            }
            FeedbackRecord::Scalar { prompt, response, raw_score } => {
                let v = r(prompt, response)?;
                if crate::reward::normalize_score(*raw_score, cfg.score_bounds)? >= 0.5 {
                    w.push(v)
                } else {
                    l.push(v)
                }
            }
        }
    }
    let s = |v: &[f64]| v.iter().map(|&r| math::sigmoid(r)).collect::<Vec<_>>();
    rec.mean_r_theta_w = mean_or_nan(&w);
    rec.mean_r_theta_l = mean_or_nan(&l);
    rec.mean_s_theta_w = mean_or_nan(&s(&w));
    rec.mean_s_theta_l = mean_or_nan(&s(&l));
    Ok(rec)
}

fn distinct_prompts(pi: &Policy) -> Vec<Prompt> {
    pi.prompts()
}

/// Offline alignment on a fixed dataset of pairwise, binary or scalar records.
pub fn train_offline(pi0: &Policy, reference: &Policy, cfg: &TrainConfig, data: &[FeedbackRecord], obs: &mut dyn EvalObserver) -> Result<TrainReport> {
    cfg.validate()?;
    check_start(pi0, reference)?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let Some(kind) = cfg.loss_kind.feedback_kind().filter(|_| cfg.loss_kind != LossKind::RmBt) else {
        return Err(Error::KindMismatch);
    };
    if data.iter().any(|d| d.kind() != kind) {
        return Err(Error::KindMismatch);
    }
    let prompts = distinct_prompts(pi0);
    let mut pi = pi0.clone();
    let mut batches = Minibatches::new(data.len(), cfg.seed);
    let mut records = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..=cfg.steps {
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let mut rec = offline_record(step, &pi, reference, cfg, data, &prompts)?;
            obs.on_eval(&mut rec);
            obs.on_policy(step, &pi);
            records.push(rec);
        }
        if step == cfg.steps {
            break;
        }
        batch.clear();
        batch.extend(batches.next(cfg.batch_size).into_iter().map(|i| data[i].clone()));
        let res = offline_loss(cfg.loss_kind, &pi, reference, cfg, &batch)?;
        pi = pi.apply_gradient(&cap(res.grad, cfg.grad_norm_cap), cfg.step_size)?;
    }
    Ok(TrainReport { records, final_policy: Some(pi) })
}

/// Explicit rewards over the whole response space, per prompt index.
struct RewardGrid {
    rows: Vec<Vec<f64>>,
}

impl RewardGrid {
    fn new(pi: &Policy, rm: &ExplicitRewardModel) -> Result<Self> {
        let space = *pi.space();
        let rows = pi
            .prompts()
            .iter()
            .map(|x| space.iter().map(|y| explicit_reward(rm, x, &y)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        if rows.iter().flatten().any(|r| !r.is_finite()) {
            return Err(Error::NonFiniteReward);
        }
        Ok(Self { rows })
    }
}

struct OnlineSetup {
    prompts: Vec<Prompt>,
    grid: RewardGrid,
}

fn online_setup(pi0: &Policy, reference: &Policy, cfg: &TrainConfig, prompts: &[Prompt], rm: &ExplicitRewardModel) -> Result<OnlineSetup> {
    cfg.validate()?;
    check_start(pi0, reference)?;
    if prompts.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for x in prompts {
        if x.id >= pi0.num_prompts() {
            return Err(Error::UnknownPrompt(x.id));
        }
    }
    let grid = RewardGrid::new(pi0, rm)?;
    Ok(OnlineSetup { prompts: prompts.to_vec(), grid })
}

fn sample_batch(pi: &Policy, prompts: &[Prompt], n: usize, rng: &mut CounterRng) -> Result<Vec<(Prompt, Response)>> {
    (0..n)
        .map(|_| {
            let x = &prompts[rng.below(prompts.len())];
            Ok((x.clone(), pi.sample(x, rng.next_u64())?))
        })
        .collect()
}

/// Expected per-prompt loss from `(log π, log π_ref, r_φ)` rows.
type ExactLoss<'a> = &'a dyn Fn(&[f64], &[f64], &[f64]) -> f64;

/// Shared online metrics; `exact_loss` maps `(log π, log π_ref, r_φ)` rows of
/// one prompt to its expected loss.
fn online_record(
    step: usize,
    pi: &Policy,
    reference: &Policy,
    cfg: &TrainConfig,
    setup: &OnlineSetup,
    exact_loss: ExactLoss<'_>,
) -> Result<EvalRecord> {
    let b = cfg.beta.value();
    let mut rec = EvalRecord::blank(step);
    let (mut loss, mut kl, mut er) = (0.0, 0.0, 0.0);
    let (mut rw, mut rl, mut sw, mut sl) = (0.0, 0.0, 0.0, 0.0);
    for x in &setup.prompts {
        let lp = pi.log_probs(x)?;
        let lr = reference.log_probs(x)?;
        let rphi = &setup.grid.rows[x.id];
        loss += exact_loss(&lp, &lr, rphi);
        kl += lp.iter().zip(&lr).map(|(&a, &c)| math::exp(a) * (a - c)).sum::<f64>().max(0.0);
        er += lp.iter().zip(rphi).map(|(&a, r)| math::exp(a) * r).sum::<f64>();
        let mut best = 0;
        let mut worst = 0;
        for (i, r) in rphi.iter().enumerate() {
            if *r > rphi[best] {
                best = i;
            }
            if *r < rphi[worst] {
                worst = i;
            }
        }
        let rt = |i: usize| b * (lp[i] - lr[i]);
        rw += rt(best);
        rl += rt(worst);
        sw += math::sigmoid(rt(best));
        sl += math::sigmoid(rt(worst));
    }
    let n = setup.prompts.len() as f64;
    rec.loss = loss / n;
    rec.kl = kl / n;
    rec.mean_explicit_reward = er / n;
    rec.mean_r_theta_w = rw / n;
    rec.mean_r_theta_l = rl / n;
    rec.mean_s_theta_w = sw / n;
    rec.mean_s_theta_l = sl / n;
    Ok(rec)
}

/// Mean per-coordinate unbiased variance over `estimates`.
fn coordinate_variance(estimates: &[Vec<f64>]) -> f64 {
    let k = estimates.len();
    if k < 2 {
        return f64::NAN;
    }
    let d = estimates[0].len();
    if d == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..d {
        let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / k as f64;
        total += estimates.iter().map(|e| (e[j] - mean) * (e[j] - mean)).sum::<f64>() / (k - 1) as f64;
    }
    total / d as f64
}

fn probe_variance(cfg: &TrainConfig, step: usize, mut estimate: impl FnMut(&mut CounterRng) -> Result<Vec<f64>>) -> Result<f64> {
    if cfg.variance_probe == 0 {
        return Ok(f64::NAN);
    }
    let base = derive_key(derive_key(cfg.seed, 0x0050_524f_4245), step as u64);
    let estimates = (0..cfg.variance_probe)
        .map(|j| estimate(&mut CounterRng::new(derive_key(base, j as u64))))
        .collect::<Result<Vec<_>>>()?;
    Ok(coordinate_variance(&estimates))
}

fn step_rng(cfg: &TrainConfig, step: usize) -> CounterRng {
    CounterRng::new(derive_key(derive_key(cfg.seed, 0x5354_4550), step as u64))
}

/// Online UNA: sample from the current policy, score with `rm`, and take one
/// gradient step on the implicit/explicit difference (samples treated as fixed).
pub fn train_online_una(
    pi0: &Policy,
    reference: &Policy,
    cfg: &TrainConfig,
    prompts: &[Prompt],
    rm: &ExplicitRewardModel,
    obs: &mut dyn EvalObserver,
) -> Result<TrainReport> {
    if !matches!(cfg.loss_kind, LossKind::UnaOnlineReward | LossKind::UnaOnlineScore) {
        return Err(Error::KindMismatch);
    }
    let setup = online_setup(pi0, reference, cfg, prompts, rm)?;
    let compare = cfg.effective_compare();
    let b = cfg.beta.value();
    let exact = move |lp: &[f64], lr: &[f64], rphi: &[f64]| -> f64 {
        lp.iter().zip(lr).zip(rphi).map(|((&a, &c), &r)| math::exp(a) * losses::online_term(compare, b * (a - c), r).0).sum()
    };
    let mut pi = pi0.clone();
    let mut records = Vec::new();
    for step in 0..=cfg.steps {
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let mut rec = online_record(step, &pi, reference, cfg, &setup, &exact)?;
            rec.grad_variance = probe_variance(cfg, step, |rng| {
                let batch = sample_batch(&pi, &setup.prompts, cfg.batch_size, rng)?;
                Ok(losses::loss_una_online(&pi, reference, cfg.beta, rm, &batch, compare)?.grad)
            })?;
            obs.on_eval(&mut rec);
            obs.on_policy(step, &pi);
            records.push(rec);
        }
        if step == cfg.steps {
            break;
        }
        let batch = sample_batch(&pi, &setup.prompts, cfg.batch_size, &mut step_rng(cfg, step))?;
        let res = losses::loss_una_online(&pi, reference, cfg.beta, rm, &batch, compare)?;
        pi = pi.apply_gradient(&cap(res.grad, cfg.grad_norm_cap), cfg.step_size)?;
    }
    Ok(TrainReport { records, final_policy: Some(pi) })
}

/// Gradient of `-(E[r_φ] - β KL)` for the policy-gradient baseline: the reward
/// term by score-function estimate with a mean-reward baseline (or exactly),
/// the KL term exactly by enumeration.
fn pg_gradient(pi: &Policy, reference: &Policy, cfg: &TrainConfig, setup: &OnlineSetup, rng: Option<&mut CounterRng>) -> Result<Vec<f64>> {
    let b = cfg.beta.value();
    let n = setup.prompts.len() as f64;
    let mut grad = vec![0.0; pi.param_count()];
    let exact_reward = rng.is_none();
    if let Some(rng) = rng {
        let batch = sample_batch(pi, &setup.prompts, cfg.batch_size, rng)?;
        let space = pi.space();
        let rewards = batch
            .iter()
            .map(|(x, y)| Ok(setup.grid.rows[x.id][space.index_of(y)?]))
            .collect::<Result<Vec<_>>>()?;
        let baseline = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let m = batch.len() as f64;
        for ((x, y), r) in batch.iter().zip(&rewards) {
            pi.accumulate_log_prob_grad(x, y, -(r - baseline) / m, &mut grad)?;
        }
    }
    for x in &setup.prompts {
        let lp = pi.log_probs(x)?;
        let lr = reference.log_probs(x)?;
        let rphi = &setup.grid.rows[x.id];
        let coeffs: Vec<f64> = lp
            .iter()
            .zip(&lr)
            .zip(rphi)
            .map(|((&a, &c), &r)| {
                let p = math::exp(a);
                let kl_part = b * p * (a - c);
                let reward_part = if exact_reward { -p * r } else { 0.0 };
                (kl_part + reward_part) / n
            })
            .collect();
        pi.accumulate_weighted_grad(x, &coeffs, &mut grad)?;
    }
    Ok(grad)
}

/// KL-penalized policy-gradient ascent on `E[r_φ] - β KL(π ‖ π_ref)`.
/// The reported loss is the exact negative objective.
pub fn train_policy_gradient_baseline(
    pi0: &Policy,
    reference: &Policy,
    cfg: &TrainConfig,
    prompts: &[Prompt],
    rm: &ExplicitRewardModel,
    obs: &mut dyn EvalObserver,
) -> Result<TrainReport> {
    if cfg.loss_kind != LossKind::PgBaseline {
        return Err(Error::KindMismatch);
    }
    let setup = online_setup(pi0, reference, cfg, prompts, rm)?;
    let b = cfg.beta.value();
    let exact = move |lp: &[f64], lr: &[f64], rphi: &[f64]| -> f64 {
        -lp.iter().zip(lr).zip(rphi).map(|((&a, &c), &r)| math::exp(a) * (r - b * (a - c))).sum::<f64>()
    };
    let mut pi = pi0.clone();
    let mut records = Vec::new();
    for step in 0..=cfg.steps {
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let mut rec = online_record(step, &pi, reference, cfg, &setup, &exact)?;
            rec.grad_variance = probe_variance(cfg, step, |rng| pg_gradient(&pi, reference, cfg, &setup, Some(rng)))?;
            obs.on_eval(&mut rec);
            obs.on_policy(step, &pi);
            records.push(rec);
        }
        if step == cfg.steps {
            break;
        }
        let grad = if cfg.pg_exact {
            pg_gradient(&pi, reference, cfg, &setup, None)?
        } else {
            pg_gradient(&pi, reference, cfg, &setup, Some(&mut step_rng(cfg, step)))?
        };
        pi = pi.apply_gradient(&cap(grad, cfg.grad_norm_cap), cfg.step_size)?;
    }
    Ok(TrainReport { records, final_policy: Some(pi) })
}

/// Bradley-Terry reward-model fitting on pairwise records.
pub fn train_reward_model(
    rm0: &ExplicitRewardModel,
    cfg: &TrainConfig,
    data: &[FeedbackRecord],
    obs: &mut dyn EvalObserver,
) -> Result<(ExplicitRewardModel, TrainReport)> {
    cfg.validate()?;
    if !rm0.is_trainable() {
        return Err(Error::NonTrainableModel);
    }
    if cfg.loss_kind != LossKind::RmBt || data.iter().any(|d| d.kind() != FeedbackKind::Pairwise) {
        return Err(Error::KindMismatch);
    }
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rm = rm0.clone();
    let mut batches = Minibatches::new(data.len(), cfg.seed);
    let mut records = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..=cfg.steps {
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let mut rec = EvalRecord::blank(step);
            rec.loss = rm_loss(&rm, data)?.value;
            rec.accuracy = rm.pairwise_accuracy(data)?;
            rec.kl = 0.0;
            let (mut w, mut l) = (Vec::new(), Vec::new());
            for d in data {
                if let FeedbackRecord::Pairwise { prompt, chosen, rejected } = d {
                    w.push(explicit_reward(&rm, prompt, chosen)?);
                    l.push(explicit_reward(&rm, prompt, rejected)?);
                }
            }
            rec.mean_explicit_reward = mean_or_nan(&[w.as_slice(), l.as_slice()].concat());
            obs.on_eval(&mut rec);
            records.push(rec);
        }
        if step == cfg.steps {
            break;
        }
        batch.clear();
        batch.extend(batches.next(cfg.batch_size).into_iter().map(|i| data[i].clone()));
        let res = rm_loss(&rm, &batch)?;
        rm = rm.apply_gradient(&cap(res.grad, cfg.grad_norm_cap), cfg.step_size)?;
    }
    Ok((rm, TrainReport { records, final_policy: None }))
}

/// Per-record margins `r_φ(x, y_w) - r_φ(x, y_l)`.
pub fn reward_margins(rm: &ExplicitRewardModel, data: &[FeedbackRecord]) -> Result<Vec<f64>> {
    data.iter()
        .map(|d| match d {
            FeedbackRecord::Pairwise { prompt, chosen, rejected } => Ok(explicit_reward(rm, prompt, chosen)? - explicit_reward(rm, prompt, rejected)?),
            _ => Err(Error::WrongFeedbackKind),
        })
        .collect()
}

/// Mean implicit margin `r_θ(y_w) - r_θ(y_l)` over pairwise records.
pub fn mean_implicit_margin(pi: &Policy, reference: &Policy, beta: Beta, data: &[FeedbackRecord]) -> Result<f64> {
    let mut total = 0.0;
    for d in data {
        let FeedbackRecord::Pairwise { prompt, chosen, rejected } = d else {
            return Err(Error::WrongFeedbackKind);
        };
        total += crate::reward::implicit_reward(pi, reference, beta, prompt, chosen)? - crate::reward::implicit_reward(pi, reference, beta, prompt, rejected)?;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Vocab;

    #[test]
    fn loss_kind_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(LossKind::parse(k.name()), Some(k));
        }
        assert_eq!(LossKind::parse("ppo"), None);
    }

    #[test]
    fn eval_grid() {
        let cfg = TrainConfig { steps: 25, eval_every: 10, ..TrainConfig::default() };
        assert_eq!(cfg.eval_steps(), vec![0, 10, 20, 25]);
        let cfg = TrainConfig { steps: 20, eval_every: 10, ..TrainConfig::default() };
        assert_eq!(cfg.eval_steps(), vec![0, 10, 20]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { steps: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn minibatches_cover_each_epoch() {
        let mut mb = Minibatches::new(10, 3);
        let mut seen: Vec<usize> = (0..4).flat_map(|_| mb.next(3)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(Minibatches::new(4, 1).next(9), vec![0, 1, 2, 3]);
    }

    #[test]
    fn coordinate_variance_known() {
        let v = coordinate_variance(&[vec![1.0, 0.0], vec![3.0, 0.0]]);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frozen_start_rejected() {
        let v = Vocab::new(3, 1).unwrap();
        let r = Policy::tabular_uniform(v, 1).unwrap().frozen_copy();
        let prompts = [Prompt::new(0)];
        let rm = ExplicitRewardModel::Table(crate::reward::RewardTable::from_fn(1, &v.space(), |_, _| 0.0).unwrap());
        let cfg = TrainConfig { loss_kind: LossKind::UnaOnlineReward, ..TrainConfig::default() };
        assert_eq!(train_online_una(&r, &r, &cfg, &prompts, &rm, &mut ()), Err(Error::FrozenPolicy));
        let cfg = TrainConfig { loss_kind: LossKind::Dpo, ..TrainConfig::default() };
        assert_eq!(train_online_una(&r.trainable_copy(), &r, &cfg, &prompts, &rm, &mut ()), Err(Error::KindMismatch));
    }
}

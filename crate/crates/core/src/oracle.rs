//! Brute-force references for the optimality relations of the KL-regularized
//! objective `E_x [E_{y~π} r(x,y) - β KL(π(·|x) ‖ π_ref(·|x))]`.
//!
//! Everything here works on the enumerated response space and never calls the
//! loss or trainer code it is used to check.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::policy::{Policy, PolicyKind, Prompt, ResponseSpace, Vocab};
use crate::reward::{Beta, RewardTable};
use crate::rng::CounterRng;

/// Slack below which an inequality counts as tight.
pub const EQUALITY_SLACK: f64 = 1e-10;
/// Maximum `|a_i - (a/b) b_i|` for the proportionality test.
pub const PROPORTIONALITY_TOL: f64 = 1e-9;
/// Slack tolerated before an inequality is declared violated.
pub const INEQUALITY_TOL: f64 = 1e-12;

/// A finite problem: reference policy, reward table and β over every prompt
/// and every enumerated response.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularInstance {
    prompts: Vec<Prompt>,
    reference: Policy,
    rewards: RewardTable,
    // rewards[x][y] in response-space order
    reward_matrix: Vec<Vec<f64>>,
    beta: Beta,
}

impl TabularInstance {
    pub fn new(reference: Policy, rewards: RewardTable, beta: Beta) -> Result<Self> {
        if reference.kind() != PolicyKind::Tabular {
            return Err(Error::InvalidConfig("instance reference must be tabular"));
        }
        let reference = if reference.is_frozen() { reference } else { reference.frozen_copy() };
        let prompts = reference.prompts();
        let space = *reference.space();
        let reward_matrix = prompts
            .iter()
            .map(|x| space.iter().map(|y| rewards.get(x.id, &y)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { prompts, reference, rewards, reward_matrix, beta })
    }

    /// Reference logits `N(0, ref_scale^2)`, rewards uniform in `[-reward_scale, reward_scale]`.
    pub fn random(seed: u64, num_prompts: usize, vocab: Vocab, beta: Beta, ref_scale: f64, reward_scale: f64) -> Result<Self> {
        let reference = Policy::tabular_random(vocab, num_prompts, ref_scale, seed)?.frozen_copy();
        let mut rng = CounterRng::new(seed).fork(0x5245_5741_5244);
        let rewards = RewardTable::from_fn(num_prompts, &vocab.space(), |_, _| rng.uniform(-reward_scale, reward_scale))?;
        Self::new(reference, rewards, beta)
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    pub fn reference(&self) -> &Policy {
        &self.reference
    }

    pub fn rewards(&self) -> &RewardTable {
        &self.rewards
    }

    pub fn reward_row(&self, prompt: usize) -> &[f64] {
        &self.reward_matrix[prompt]
    }

    pub fn beta(&self) -> Beta {
        self.beta
    }

    pub fn space(&self) -> &ResponseSpace {
        self.reference.space()
    }

    pub fn with_beta(&self, beta: Beta) -> Self {
        Self { beta, ..self.clone() }
    }

    /// `log Z(x) = log Σ_y π_ref(y|x) exp(r(x,y)/β)`, max-shifted.
    pub fn log_partition(&self) -> Result<Vec<f64>> {
        let b = self.beta.value();
        self.prompts
            .iter()
            .map(|x| {
                let lr = self.reference.log_probs(x)?;
                let terms: Vec<f64> = lr.iter().zip(&self.reward_matrix[x.id]).map(|(l, r)| l + r / b).collect();
                let lz = math::log_sum_exp(&terms);
                if lz.is_finite() {
                    Ok(lz)
                } else {
                    Err(Error::NonFiniteTilt)
                }
            })
            .collect()
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.compatible(&self.reference) {
            Ok(())
        } else {
            Err(Error::VocabMismatch)
        }
    }
}

/// `π*(y|x) = π_ref(y|x) exp(r(x,y)/β) / Z(x)` as a tabular policy whose
/// logits are the exact log-probabilities.
pub fn optimal_policy_closed_form(inst: &TabularInstance) -> Result<Policy> {
    let b = inst.beta.value();
    let log_z = inst.log_partition()?;
    let mut logits = Vec::with_capacity(inst.prompts.len() * inst.space().len());
    for x in &inst.prompts {
        let lr = inst.reference.log_probs(x)?;
        for (l, r) in lr.iter().zip(&inst.reward_matrix[x.id]) {
            let v = l + r / b - log_z[x.id];
            if !v.is_finite() {
                return Err(Error::NonFiniteTilt);
            }
            logits.push(v);
        }
    }
    Policy::tabular(inst.reference.vocab(), inst.prompts.len(), logits)
}

/// Per-prompt `E_{y~π} r(x,y) - β KL(π ‖ π_ref)`.
pub fn objective_per_prompt(inst: &TabularInstance, pi: &Policy) -> Result<Vec<f64>> {
    inst.check_policy(pi)?;
    let b = inst.beta.value();
    inst.prompts
        .iter()
        .map(|x| {
            let lp = pi.log_probs(x)?;
            let lr = inst.reference.log_probs(x)?;
            Ok(lp
                .iter()
                .zip(&lr)
                .zip(&inst.reward_matrix[x.id])
                .map(|((&p, &q), &r)| {
                    let prob = math::exp(p);
                    if prob == 0.0 {
                        0.0
                    } else {
                        prob * (r - b * (p - q))
                    }
                })
                .sum())
        })
        .collect()
}

/// Exact objective with prompts weighted uniformly.
pub fn evaluate_objective(inst: &TabularInstance, pi: &Policy) -> Result<f64> {
    let per = objective_per_prompt(inst, pi)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// `g(x, y) = r(x, y) - β log(π(y|x) / π_ref(y|x))`.
    pub gaps: Vec<Vec<f64>>,
    /// π-weighted mean gap per prompt (the induced `f(x) + c`).
    pub means: Vec<f64>,
    /// `max_y |g(x, y) - mean(x)|`.
    pub max_deviation: Vec<f64>,
    pub log_partition: Vec<f64>,
    /// `Z(x)`; may be `inf` when only `log Z` is representable.
    pub partition: Vec<f64>,
    /// `exp(mean(x) / β)` per prompt.
    pub lambda_estimate: Vec<f64>,
}

impl GapReport {
    pub fn worst_deviation(&self) -> f64 {
        self.max_deviation.iter().copied().fold(0.0, f64::max)
    }
}

pub fn recovered_reward_gap(inst: &TabularInstance, pi: &Policy) -> Result<GapReport> {
    inst.check_policy(pi)?;
    let b = inst.beta.value();
    let log_partition = inst.log_partition()?;
    let mut gaps = Vec::new();
    let mut means = Vec::new();
    let mut max_deviation = Vec::new();
    for x in &inst.prompts {
        let lp = pi.log_probs(x)?;
        let lr = inst.reference.log_probs(x)?;
        let g: Vec<f64> = inst.reward_matrix[x.id].iter().zip(lp.iter().zip(&lr)).map(|(r, (p, q))| r - b * (p - q)).collect();
        let mean: f64 = g.iter().zip(&lp).map(|(gi, p)| gi * math::exp(*p)).sum();
        max_deviation.push(g.iter().map(|gi| (gi - mean).abs()).fold(0.0, f64::max));
        means.push(mean);
        gaps.push(g);
    }
    let partition = log_partition.iter().map(|&l| math::exp(l)).collect();
    let lambda_estimate = means.iter().map(|m| math::exp(m / b)).collect();
    Ok(GapReport { gaps, means, max_deviation, log_partition, partition, lambda_estimate })
}

/// Per-prompt total variation `½ Σ_y |p(y|x) - q(y|x)|`.
pub fn total_variation(p: &Policy, q: &Policy) -> Result<Vec<f64>> {
    if !p.compatible(q) {
        return Err(Error::VocabMismatch);
    }
    p.prompts()
        .iter()
        .map(|x| {
            let a = p.probs(x)?;
            let b = q.probs(x)?;
            Ok(0.5 * a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSumCheck {
    pub holds: bool,
    pub slack: f64,
    pub equality: bool,
}

/// `Σ a_i log(a_i/b_i) ≥ a log(a/b)`, with `0 log 0 = 0`.
pub fn check_log_sum_inequality(a: &[f64], b: &[f64]) -> Result<LogSumCheck> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    if b.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::NonPositiveDenominator);
    }
    if a.iter().any(|&v| v.is_nan() || v < 0.0) {
        return Err(Error::NegativeNumerator);
    }
    let term = |ai: f64, bi: f64| if ai == 0.0 { 0.0 } else { ai * math::ln(ai / bi) };
    let lhs: f64 = a.iter().zip(b).map(|(&ai, &bi)| term(ai, bi)).sum();
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let slack = lhs - term(sa, sb);
    let ratio = sa / sb;
    let proportional = a.iter().zip(b).all(|(&ai, &bi)| (ai - ratio * bi).abs() <= PROPORTIONALITY_TOL);
    Ok(LogSumCheck { holds: slack >= -INEQUALITY_TOL, slack, equality: slack <= EQUALITY_SLACK && proportional })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenCheck {
    pub holds: bool,
    pub slack: f64,
}

/// Jensen's inequality for the convex `φ(x) = x log x`:
/// `Σ w_i φ(x_i) / Σ w_i - φ(Σ w_i x_i / Σ w_i) ≥ 0`.
pub fn check_jensen(weights: &[f64], points: &[f64]) -> Result<JensenCheck> {
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch { expected: weights.len(), found: points.len() });
    }
    if weights.iter().chain(points).any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::NonPositiveInput);
    }
    let sw: f64 = weights.iter().sum();
    let mean_phi = weights.iter().zip(points).map(|(w, &x)| w * math::xlogx(x)).sum::<f64>() / sw;
    let mean_x = weights.iter().zip(points).map(|(w, x)| w * x).sum::<f64>() / sw;
    let slack = mean_phi - math::xlogx(mean_x);
    Ok(JensenCheck { holds: slack >= -INEQUALITY_TOL, slack })
}

/// Central differences `(L(p + eps e_i) - L(p - eps e_i)) / 2 eps`.
pub fn finite_diff_grad(mut loss_eval: impl FnMut(&[f64]) -> f64, params: &[f64], eps: f64) -> Result<Vec<f64>> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidConfig("eps must be positive"));
    }
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss_eval(&p);
        p[i] = orig - eps;
        let down = loss_eval(&p);
        p[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteEvaluation);
        }
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Componentwise `|a - b| / max(|a|, |b|, floor)`, maximized.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// For a two-response instance: the probability of the first response that
/// maximizes each prompt's objective over the grid `{0, step, 2 step, ..., 1}`.
pub fn grid_argmax_two_responses(inst: &TabularInstance, step: f64) -> Result<Vec<f64>> {
    if inst.space().len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: inst.space().len() });
    }
    let b = inst.beta.value();
    let cells = libm::round(1.0 / step) as usize;
    inst.prompts
        .iter()
        .map(|x| {
            let q = inst.reference.probs(x)?;
            let r = &inst.reward_matrix[x.id];
            let value = |p0: f64| {
                let p = [p0, 1.0 - p0];
                (0..2).map(|i| if p[i] == 0.0 { 0.0 } else { p[i] * (r[i] - b * math::ln(p[i] / q[i])) }).sum::<f64>()
            };
            let mut best = (f64::NEG_INFINITY, 0.0);
            for k in 0..=cells {
                let p0 = k as f64 / cells as f64;
                let v = value(p0);
                if v > best.0 {
                    best = (v, p0);
                }
            }
            Ok(best.1)
        })
        .collect()
}

/// Random probability vector of length `n` (Dirichlet(1) via exponentials).
pub fn random_simplex(rng: &mut CounterRng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -math::ln(rng.next_f64_open0())).collect();
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
    v
}

/// Random tabular policy over the instance's space whose rows are drawn
/// with logits `N(0, scale^2)`.
pub fn random_policy_like(inst: &TabularInstance, scale: f64, seed: u64) -> Result<Policy> {
    Policy::tabular_random(inst.reference.vocab(), inst.prompts.len(), scale, seed)
}

/// Copy of the reward table with `offsets[x]` added to every reward of prompt `x`.
pub fn shift_rewards(inst: &TabularInstance, offsets: &[f64]) -> Result<TabularInstance> {
    let mut table = RewardTable::new();
    let space = *inst.space();
    for x in &inst.prompts {
        for (i, y) in space.iter().enumerate() {
            table.insert(x.id, &y, inst.reward_matrix[x.id][i] + offsets[x.id])?;
        }
    }
    TabularInstance::new(inst.reference.clone(), table, inst.beta)
}

/// Tabular policy from explicit per-prompt probability rows.
pub fn policy_from_probs(vocab: Vocab, rows: &[Vec<f64>]) -> Result<Policy> {
    let mut logits = vec![];
    for row in rows {
        for &p in row {
            logits.push(if p > 0.0 { math::ln(p) } else { -745.0 });
        }
    }
    Policy::tabular(vocab, rows.len(), logits)
}

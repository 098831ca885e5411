//! Small autoregressive token policies with exact log-probabilities.
//!
//! Two parameterizations share one interface:
//! - *tabular*: one free logit per `(prompt, response)`; the response
//!   distribution for a prompt is the softmax over its row.
//! - *parametric*: per-position conditionals from a small feed-forward map
//!   over a one-hot `(prompt, position, previous token)` encoding. Sequence
//!   log-probability is the sum of conditional log-probabilities including the
//!   terminator; at position `max_len` the terminator is forced.
//!
//! Policies are values: [`Policy::apply_gradient`] returns a new policy, and a
//! frozen policy (the reference) rejects updates.

mod parametric;
mod space;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::CounterRng;
use parametric::Net;

pub use space::{Prompt, Response, ResponseSpace, TokenId, Vocab, EOS, MAX_LEN, MAX_SPACE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Tabular,
    Parametric,
}

impl PolicyKind {
    pub fn tag(self) -> u8 {
        match self {
            PolicyKind::Tabular => 0,
            PolicyKind::Parametric => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PolicyKind::Tabular),
            1 => Some(PolicyKind::Parametric),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Tabular { num_prompts: usize },
    /// `hidden == 0` is a single linear map.
    Parametric { num_prompts: usize, hidden: usize, bias: bool },
}

impl Architecture {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Architecture::Tabular { .. } => PolicyKind::Tabular,
            Architecture::Parametric { .. } => PolicyKind::Parametric,
        }
    }

    pub fn num_prompts(&self) -> usize {
        match *self {
            Architecture::Tabular { num_prompts } | Architecture::Parametric { num_prompts, .. } => num_prompts,
        }
    }

    pub fn param_count(&self, vocab: &Vocab) -> usize {
        match *self {
            Architecture::Tabular { num_prompts } => num_prompts * vocab.space().len(),
            Architecture::Parametric { num_prompts, hidden, bias } => Net::new(vocab, num_prompts, hidden, bias).param_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    arch: Architecture,
    vocab: Vocab,
    space: ResponseSpace,
    params: Vec<f64>,
    frozen: bool,
}

impl Policy {
    pub fn new(arch: Architecture, vocab: Vocab, params: Vec<f64>) -> Result<Self> {
        if arch.num_prompts() == 0 {
            return Err(Error::InvalidConfig("policy needs at least one prompt"));
        }
        let expected = arch.param_count(&vocab);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(Self { arch, vocab, space: vocab.space(), params, frozen: false })
    }

    pub fn tabular(vocab: Vocab, num_prompts: usize, logits: Vec<f64>) -> Result<Self> {
        Self::new(Architecture::Tabular { num_prompts }, vocab, logits)
    }

    pub fn tabular_uniform(vocab: Vocab, num_prompts: usize) -> Result<Self> {
        let n = num_prompts * vocab.space().len();
        Self::tabular(vocab, num_prompts, vec![0.0; n])
    }

    /// Logits drawn i.i.d. `N(0, scale^2)`.
    pub fn tabular_random(vocab: Vocab, num_prompts: usize, scale: f64, seed: u64) -> Result<Self> {
        let arch = Architecture::Tabular { num_prompts };
        Self::random(arch, vocab, scale, seed)
    }

    pub fn parametric_zeros(vocab: Vocab, num_prompts: usize, hidden: usize, bias: bool) -> Result<Self> {
        let arch = Architecture::Parametric { num_prompts, hidden, bias };
        let n = arch.param_count(&vocab);
        Self::new(arch, vocab, vec![0.0; n])
    }

    pub fn parametric_random(vocab: Vocab, num_prompts: usize, hidden: usize, bias: bool, scale: f64, seed: u64) -> Result<Self> {
        Self::random(Architecture::Parametric { num_prompts, hidden, bias }, vocab, scale, seed)
    }

    fn random(arch: Architecture, vocab: Vocab, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = CounterRng::new(seed);
        let n = arch.param_count(&vocab);
        let params = (0..n).map(|_| scale * rng.normal()).collect();
        Self::new(arch, vocab, params)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn kind(&self) -> PolicyKind {
        self.arch.kind()
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn space(&self) -> &ResponseSpace {
        &self.space
    }

    pub fn num_prompts(&self) -> usize {
        self.arch.num_prompts()
    }

    pub fn prompts(&self) -> Vec<Prompt> {
        (0..self.num_prompts()).map(Prompt::new).collect()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Frozen copy, suitable as a reference policy.
    pub fn frozen_copy(&self) -> Self {
        Self { frozen: true, ..self.clone() }
    }

    /// Unfrozen copy, suitable as the initial trainable policy.
    pub fn trainable_copy(&self) -> Self {
        Self { frozen: false, ..self.clone() }
    }

    /// Same architecture and frozen flag, new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        let mut p = Self::new(self.arch, self.vocab, params)?;
        p.frozen = self.frozen;
        Ok(p)
    }

    /// `true` when both policies are defined over the same responses and prompts.
    pub fn compatible(&self, other: &Policy) -> bool {
        self.vocab == other.vocab && self.num_prompts() == other.num_prompts()
    }

    fn check_prompt(&self, x: &Prompt) -> Result<()> {
        if x.id < self.num_prompts() {
            Ok(())
        } else {
            Err(Error::UnknownPrompt(x.id))
        }
    }

    fn net(&self) -> Option<Net> {
        match self.arch {
            Architecture::Tabular { .. } => None,
            Architecture::Parametric { num_prompts, hidden, bias } => Some(Net::new(&self.vocab, num_prompts, hidden, bias)),
        }
    }

    fn row(&self, prompt: usize) -> &[f64] {
        let n = self.space.len();
        &self.params[prompt * n..(prompt + 1) * n]
    }

    /// `log π(y|x)` in nats.
    pub fn log_prob(&self, x: &Prompt, y: &Response) -> Result<f64> {
        self.check_prompt(x)?;
        match self.net() {
            None => {
                let idx = self.space.index_of(y)?;
                let row = self.row(x.id);
                Ok(row[idx] - math::log_sum_exp(row))
            }
            Some(net) => {
                y.check(&self.vocab)?;
                let mut total = 0.0;
                let mut prev = None;
                for (pos, &tok) in y.tokens().iter().enumerate() {
                    if pos < self.vocab.max_len() {
                        total += net.forward(&self.params, x.id, pos, prev).log_probs[tok as usize];
                    }
                    prev = Some(tok);
                }
                Ok(total)
            }
        }
    }

    /// Returns `log π(y|x)` and adds `scale * ∇ log π(y|x)` into `grad`.
    pub fn accumulate_log_prob_grad(&self, x: &Prompt, y: &Response, scale: f64, grad: &mut [f64]) -> Result<f64> {
        self.check_prompt(x)?;
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), found: grad.len() });
        }
        match self.net() {
            None => {
                let n = self.space.len();
                let idx = self.space.index_of(y)?;
                let row = self.row(x.id);
                let lse = math::log_sum_exp(row);
                let g = &mut grad[x.id * n..(x.id + 1) * n];
                for (gj, &l) in g.iter_mut().zip(row) {
                    *gj -= scale * math::exp(l - lse);
                }
                g[idx] += scale;
                Ok(row[idx] - lse)
            }
            Some(net) => {
                y.check(&self.vocab)?;
                let mut total = 0.0;
                let mut prev = None;
                for (pos, &tok) in y.tokens().iter().enumerate() {
                    if pos < self.vocab.max_len() {
                        let fwd = net.forward(&self.params, x.id, pos, prev);
                        total += fwd.log_probs[tok as usize];
                        net.backward(&self.params, &fwd, tok, scale, grad);
                    }
                    prev = Some(tok);
                }
                Ok(total)
            }
        }
    }

    /// Adds `Σ_y coeffs[y] ∇ log π(y|x)` into `grad`, `coeffs` indexed by
    /// response-space order.
    pub fn accumulate_weighted_grad(&self, x: &Prompt, coeffs: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_prompt(x)?;
        let n = self.space.len();
        if coeffs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: coeffs.len() });
        }
        match self.net() {
            None => {
                let probs = self.probs(x)?;
                let total: f64 = coeffs.iter().sum();
                let g = &mut grad[x.id * n..(x.id + 1) * n];
                for ((gj, &c), &p) in g.iter_mut().zip(coeffs).zip(&probs) {
                    *gj += c - total * p;
                }
            }
            Some(_) => {
                for (i, &c) in coeffs.iter().enumerate() {
                    if c != 0.0 {
                        self.accumulate_log_prob_grad(x, &self.space.response(i), c, grad)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// `log π(·|x)` over the whole response space, in [`ResponseSpace`] order.
    pub fn log_probs(&self, x: &Prompt) -> Result<Vec<f64>> {
        self.check_prompt(x)?;
        match self.net() {
            None => {
                let mut row = self.row(x.id).to_vec();
                math::log_softmax_in_place(&mut row);
                Ok(row)
            }
            Some(net) => {
                let mut out = vec![0.0; self.space.len()];
                self.walk(&net, x.id, 0, None, 0, 0.0, &mut out);
                Ok(out)
            }
        }
    }

    // Depth-first walk over prefixes; `num` is the base-(size-1) content number.
    #[allow(clippy::too_many_arguments)]
    fn walk(&self, net: &Net, prompt: usize, pos: usize, prev: Option<TokenId>, num: usize, acc: f64, out: &mut [f64]) {
        let k = self.space.radix();
        if pos == self.vocab.max_len() {
            out[self.space.offset(pos) + num] = acc;
            return;
        }
        let lp = net.forward(&self.params, prompt, pos, prev).log_probs;
        out[self.space.offset(pos) + num] = acc + lp[EOS as usize];
        for (tok, &l) in lp.iter().enumerate().skip(1) {
            self.walk(net, prompt, pos + 1, Some(tok as TokenId), num * k + (tok - 1), acc + l, out);
        }
    }

    pub fn probs(&self, x: &Prompt) -> Result<Vec<f64>> {
        Ok(self.log_probs(x)?.into_iter().map(math::exp).collect())
    }

    /// Draws `y ~ π(·|x)`; deterministic in `(params, x, seed)`.
    pub fn sample(&self, x: &Prompt, seed: u64) -> Result<Response> {
        self.check_prompt(x)?;
        let mut rng = CounterRng::new(seed);
        match self.net() {
            None => {
                let probs = self.probs(x)?;
                let idx = draw(&probs, rng.next_f64());
                Ok(self.space.response(idx))
            }
            Some(net) => {
                let mut tokens = Vec::with_capacity(self.vocab.max_len() + 1);
                let mut prev = None;
                for pos in 0..self.vocab.max_len() {
                    let probs: Vec<f64> = net.forward(&self.params, x.id, pos, prev).log_probs.into_iter().map(math::exp).collect();
                    let tok = draw(&probs, rng.next_f64()) as TokenId;
                    tokens.push(tok);
                    if tok == EOS {
                        return Response::new(tokens);
                    }
                    prev = Some(tok);
                }
                tokens.push(EOS);
                Response::new(tokens)
            }
        }
    }

    /// Exact `KL(self(·|x) ‖ other(·|x))` by enumeration.
    pub fn kl_divergence(&self, other: &Policy, x: &Prompt) -> Result<f64> {
        if !self.compatible(other) {
            return Err(Error::VocabMismatch);
        }
        let lp = self.log_probs(x)?;
        let lq = other.log_probs(x)?;
        Ok(lp.iter().zip(&lq).map(|(&a, &b)| math::exp(a) * (a - b)).sum())
    }

    /// `params - step_size * grad` as a new policy.
    pub fn apply_gradient(&self, grad: &[f64], step_size: f64) -> Result<Policy> {
        if self.frozen {
            return Err(Error::FrozenPolicy);
        }
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), found: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        if !(step_size >= 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidConfig("step size must be finite and non-negative"));
        }
        let params = self.params.iter().zip(grad).map(|(p, g)| p - step_size * g).collect();
        Ok(Self { params, ..self.clone() })
    }
}

/// Inverse-CDF draw; falls back to the last index on rounding shortfall.
fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

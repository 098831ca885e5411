//! Per-position conditional logits from a one-hot encoding of
//! `(prompt id, position, previous token)`.
//!
//! Layout of the flat parameter vector, `D = prompts + (max_len + 1) + (size + 1)`:
//! - linear (`hidden == 0`): `W[size x D]`, then `b[size]` when `bias`.
//! - one tanh layer: `W1[hidden x D]`, `b1[hidden]`?, `W2[size x hidden]`, `b2[size]`?.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::policy::space::{TokenId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Net {
    pub prompts: usize,
    pub size: usize,
    pub max_len: usize,
    pub hidden: usize,
    pub bias: bool,
}

/// Activations kept from a forward pass for backprop.
pub(crate) struct Forward {
    pub inputs: [usize; 3],
    pub hidden: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Net {
    pub fn new(vocab: &Vocab, prompts: usize, hidden: usize, bias: bool) -> Self {
        Self { prompts, size: vocab.size(), max_len: vocab.max_len(), hidden, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.prompts + (self.max_len + 1) + (self.size + 1)
    }

    pub fn param_count(&self) -> usize {
        let d = self.input_dim();
        let b = usize::from(self.bias);
        if self.hidden == 0 {
            self.size * d + b * self.size
        } else {
            self.hidden * d + b * self.hidden + self.size * self.hidden + b * self.size
        }
    }

    /// `prev == None` marks the first position.
    pub fn inputs(&self, prompt: usize, pos: usize, prev: Option<TokenId>) -> [usize; 3] {
        let prev_slot = prev.map_or(self.size, |t| t as usize);
        [prompt, self.prompts + pos, self.prompts + self.max_len + 1 + prev_slot]
    }

    pub fn forward(&self, params: &[f64], prompt: usize, pos: usize, prev: Option<TokenId>) -> Forward {
        let d = self.input_dim();
        let inputs = self.inputs(prompt, pos, prev);
        let mut logits = vec![0.0; self.size];
        let mut hidden = Vec::new();
        if self.hidden == 0 {
            for (k, l) in logits.iter_mut().enumerate() {
                let row = &params[k * d..(k + 1) * d];
                *l = row[inputs[0]] + row[inputs[1]] + row[inputs[2]];
            }
            if self.bias {
                let b = &params[self.size * d..];
                for (l, bk) in logits.iter_mut().zip(b) {
                    *l += bk;
                }
            }
        } else {
            let h = self.hidden;
            let (w1, rest) = params.split_at(h * d);
            let (b1, rest) = rest.split_at(if self.bias { h } else { 0 });
            let (w2, b2) = rest.split_at(self.size * h);
            hidden = (0..h)
                .map(|j| {
                    let row = &w1[j * d..(j + 1) * d];
                    let pre = row[inputs[0]] + row[inputs[1]] + row[inputs[2]] + b1.get(j).copied().unwrap_or(0.0);
                    math::tanh(pre)
                })
                .collect();
            for (k, l) in logits.iter_mut().enumerate() {
                let row = &w2[k * h..(k + 1) * h];
                *l = row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + b2.get(k).copied().unwrap_or(0.0);
            }
        }
        math::log_softmax_in_place(&mut logits);
        Forward { inputs, hidden, log_probs: logits }
    }

    /// Adds `scale * d log p(target) / d params` into `grad`.
    pub fn backward(&self, params: &[f64], fwd: &Forward, target: TokenId, scale: f64, grad: &mut [f64]) {
        let d = self.input_dim();
        let dlogits: Vec<f64> = fwd
            .log_probs
            .iter()
            .enumerate()
            .map(|(k, &lp)| scale * (f64::from(u8::from(k == target as usize)) - math::exp(lp)))
            .collect();
        if self.hidden == 0 {
            for (k, &g) in dlogits.iter().enumerate() {
                for &i in &fwd.inputs {
                    grad[k * d + i] += g;
                }
            }
            if self.bias {
                let off = self.size * d;
                for (k, &g) in dlogits.iter().enumerate() {
                    grad[off + k] += g;
                }
            }
        } else {
            let h = self.hidden;
            let b1_off = h * d;
            let w2_off = b1_off + if self.bias { h } else { 0 };
            let b2_off = w2_off + self.size * h;
            let w2 = &params[w2_off..b2_off];
            for j in 0..h {
                let a = fwd.hidden[j];
                let mut dh = 0.0;
                for (k, &g) in dlogits.iter().enumerate() {
                    grad[w2_off + k * h + j] += g * a;
                    dh += g * w2[k * h + j];
                }
                let dpre = dh * (1.0 - a * a);
                for &i in &fwd.inputs {
                    grad[j * d + i] += dpre;
                }
                if self.bias {
                    grad[b1_off + j] += dpre;
                }
            }
            if self.bias {
                for (k, &g) in dlogits.iter().enumerate() {
                    grad[b2_off + k] += g;
                }
            }
        }
    }
}

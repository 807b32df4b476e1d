//! The standard decoding-controller stack applied to first-stage logits.
//!
//! Composition order is fixed: repetition penalty, minimum length,
//! temperature, top-k, top-p. Every controller has an identity setting and
//! the default configuration is the identity stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logits::{softmax, LogitVector};
use crate::TokenId;

/// Slack on the top-p cumulative comparison. Absorbs the rounding of the
/// softmax normalisation so that a prefix summing to exactly `p` in real
/// arithmetic is accepted.
const TOP_P_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessorConfig {
    pub temperature: f64,
    /// 0 disables.
    pub top_k: usize,
    /// 1.0 disables.
    pub top_p: f64,
    /// 1.0 disables.
    pub repetition_penalty: f64,
    pub min_length: usize,
    pub eos_token_id: TokenId,
}

impl Default for ProcessorConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 0,
            top_p: 1.0,
            repetition_penalty: 1.0,
            min_length: 0,
            eos_token_id: 0,
        }
    }
}

impl ProcessorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "repetition_penalty must be >= 1, got {}",
                self.repetition_penalty
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.temperature == 1.0
            && self.top_k == 0
            && self.top_p == 1.0
            && self.repetition_penalty == 1.0
            && self.min_length == 0
    }
}

/// CTRL-style penalty: positive scores are divided by `rho`, negative ones
/// multiplied, for every token id present in `history`.
pub fn apply_repetition_penalty(z: &LogitVector, history: &[TokenId], rho: f64) -> LogitVector {
    let mut out = z.clone();
    if rho == 1.0 {
        return out;
    }
    let scores = out.as_mut_slice();
    let mut seen = vec![false; scores.len()];
    for &t in history {
        let t = t as usize;
        if t >= scores.len() || seen[t] {
            continue;
        }
        seen[t] = true;
        let v = scores[t];
        if v.is_finite() {
            scores[t] = if v > 0.0 { v / rho } else { v * rho };
        }
    }
    out
}

pub fn enforce_min_length(
    z: &LogitVector,
    generated_len: usize,
    cfg: &ProcessorConfig,
) -> LogitVector {
    let mut out = z.clone();
    if generated_len < cfg.min_length {
        if let Some(v) = out.as_mut_slice().get_mut(cfg.eos_token_id as usize) {
            *v = f64::NEG_INFINITY;
        }
    }
    out
}

pub fn apply_temperature(z: &LogitVector, temperature: f64) -> LogitVector {
    if temperature == 1.0 {
        return z.clone();
    }
    z.map(|_, v| v / temperature)
}

/// Finite entries ordered by score descending, ties by lower token id.
fn ranked(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_finite()).collect();
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    idx
}

fn keep_only(z: &LogitVector, keep: &[usize]) -> LogitVector {
    let mut mask = vec![false; z.len()];
    keep.iter().for_each(|&i| mask[i] = true);
    z.map(|i, v| if mask[i] { v } else { f64::NEG_INFINITY })
}

pub fn apply_top_k(z: &LogitVector, k: usize) -> LogitVector {
    if k == 0 || k >= z.finite_count() {
        return z.clone();
    }
    let order = ranked(z.as_slice());
    keep_only(z, &order[..k])
}

pub fn apply_top_p(z: &LogitVector, p: f64) -> Result<LogitVector> {
    if p >= 1.0 {
        return Ok(z.clone());
    }
    let probs = softmax(z)?;
    let probs = probs.as_slice();
    let order = ranked(z.as_slice());
    let mut cumulative = 0.0;
    let mut cut = order.len();
    for (rank, &i) in order.iter().enumerate() {
        cumulative += probs[i];
        if cumulative >= p - TOP_P_SLACK {
            cut = rank + 1;
            break;
        }
    }
    Ok(keep_only(z, &order[..cut.max(1)]))
}

/// Runs the full controller stack in its fixed order.
pub fn run_stack(
    z: &LogitVector,
    history: &[TokenId],
    generated_len: usize,
    cfg: &ProcessorConfig,
) -> Result<LogitVector> {
    let z = apply_repetition_penalty(z, history, cfg.repetition_penalty);
    let z = enforce_min_length(&z, generated_len, cfg);
    if z.is_degenerate() {
        return Err(Error::DegenerateLogits);
    }
    let z = apply_temperature(&z, cfg.temperature);
    let z = apply_top_k(&z, cfg.top_k);
    apply_top_p(&z, cfg.top_p)
}

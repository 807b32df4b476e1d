//! Numerically stable primitives over vocabulary-sized score vectors.
//!
//! `f64::NEG_INFINITY` is the banned-token sentinel throughout the crate.
//! NaN and `+inf` are rejected at construction time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Raw scores over the vocabulary at one decoding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScoreArray", into = "ScoreArray")]
pub struct LogitVector(Vec<f64>);

/// Log-probabilities: `logsumexp == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbVector(Vec<f64>);

/// Probabilities: nonnegative, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl LogitVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v == f64::INFINITY)
        {
            return Err(Error::InvalidLogit { index, value });
        }
        Ok(Self(scores))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, id: TokenId) -> Option<f64> {
        self.0.get(id as usize).copied()
    }

    /// True when no entry is finite.
    pub fn is_degenerate(&self) -> bool {
        !self.0.iter().any(|v| v.is_finite())
    }

    pub fn finite_count(&self) -> usize {
        self.0.iter().filter(|v| v.is_finite()).count()
    }

    /// Elementwise map. The closure must not produce NaN or `+inf`.
    pub(crate) fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        Self(self.0.iter().enumerate().map(|(i, &v)| f(i, v)).collect())
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl LogProbVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Log-probabilities are valid logits.
    pub fn into_logits(self) -> LogitVector {
        LogitVector(self.0)
    }
}

impl ProbVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn max_finite(z: &[f64]) -> Result<f64> {
    z.iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |m| m.max(v)))
        })
        .ok_or(Error::DegenerateLogits)
}

/// `log(sum(exp(z)))`, computed with max-subtraction.
pub fn logsumexp(z: &[f64]) -> Result<f64> {
    let m = max_finite(z)?;
    let sum: f64 = z
        .iter()
        .filter(|v| v.is_finite())
        .map(|&v| (v - m).exp())
        .sum();
    Ok(m + sum.ln())
}

/// Computed as `(z - max) - log(sum(exp(z - max)))` so that large equal
/// scores cancel exactly.
pub fn log_softmax(z: &LogitVector) -> Result<LogProbVector> {
    let m = max_finite(&z.0)?;
    let log_sum =
        z.0.iter()
            .filter(|v| v.is_finite())
            .map(|&v| (v - m).exp())
            .sum::<f64>()
            .ln();
    Ok(LogProbVector(
        z.0.iter()
            .map(|&v| {
                if v.is_finite() {
                    (v - m) - log_sum
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect(),
    ))
}

pub fn softmax(z: &LogitVector) -> Result<ProbVector> {
    let m = max_finite(&z.0)?;
    let mut p: Vec<f64> =
        z.0.iter()
            .map(|&v| if v.is_finite() { (v - m).exp() } else { 0.0 })
            .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    Ok(ProbVector(p))
}

/// `(1 - w) * a + w * b` with `0 * (-inf) = 0`, so a zero weight drops that
/// branch entirely, bans included.
pub fn interpolate(a: &LogitVector, b: &LogitVector, w: f64) -> Result<LogitVector> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidConfig(format!(
            "interpolation weight {w} outside [0, 1]"
        )));
    }
    let term = |weight: f64, x: f64| if weight == 0.0 { 0.0 } else { weight * x };
    Ok(LogitVector(
        a.0.iter()
            .zip(&b.0)
            .map(|(&x, &y)| term(1.0 - w, x) + term(w, y))
            .collect(),
    ))
}

/// Index of the maximum; ties go to the lowest token id.
pub fn argmax(z: &LogitVector) -> Result<TokenId> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in z.0.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i as TokenId)
        .ok_or(Error::DegenerateLogits)
}

/// Wire form of a score array: banned entries are written as the string
/// `"-inf"`, everything else as a shortest round-trip decimal.
#[derive(Serialize, Deserialize)]
#[serde(transparent)]
pub(crate) struct ScoreArray(Vec<Score>);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Score {
    Finite(f64),
    Sentinel(String),
}

impl From<LogitVector> for ScoreArray {
    fn from(v: LogitVector) -> Self {
        ScoreArray(
            v.0.into_iter()
                .map(|x| {
                    if x.is_finite() {
                        Score::Finite(x)
                    } else {
                        Score::Sentinel("-inf".into())
                    }
                })
                .collect(),
        )
    }
}

impl TryFrom<ScoreArray> for LogitVector {
    type Error = Error;

    fn try_from(a: ScoreArray) -> Result<Self> {
        let scores =
            a.0.into_iter()
                .map(|s| match s {
                    Score::Finite(x) => Ok(x),
                    Score::Sentinel(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                    Score::Sentinel(s) => Err(Error::InvalidConfig(format!(
                        "unexpected score literal `{s}`"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
        LogitVector::new(scores)
    }
}

/// `serde(with)` adapter giving a plain `Vec<f64>` the score-array wire form.
pub(crate) mod score_vec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{LogitVector, Score, ScoreArray};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|&x| {
                if x == f64::NEG_INFINITY {
                    Score::Sentinel("-inf".into())
                } else {
                    Score::Finite(x)
                }
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let arr = ScoreArray::deserialize(d)?;
        LogitVector::try_from(arr)
            .map(LogitVector::into_vec)
            .map_err(serde::de::Error::custom)
    }
}

//! Simulated expert classifiers over the session ontology.

use crate::error::Result;
use crate::expert::{ClinicalLabel, ClinicalLabelSet, PROB_EPS};
use crate::rng::DecodeRng;
use crate::world::LatentCase;

pub trait ExpertBackend: Sync {
    /// Label set for `case`. Stateless: all randomness comes from `rng`.
    fn predict(&self, case: &LatentCase, rng: &mut DecodeRng) -> Result<ClinicalLabelSet>;
}

/// Per label: the target is the truth bit, flipped with probability
/// `flip_rate`. The probability is the target moved `|N(0, sigma)|` toward
/// the other side, clamped into `[eps, 1 - eps]`. Draw order per label: flip
/// coin, then the Gaussian.
pub fn noisy_expert_predict(
    case: &LatentCase,
    ontology: &[String],
    noise_sigma: f64,
    flip_rate: f64,
    rng: &mut DecodeRng,
) -> Result<ClinicalLabelSet> {
    let labels = ontology
        .iter()
        .zip(&case.truth)
        .map(|(name, &present)| {
            let target = present ^ rng.bernoulli(flip_rate);
            let noise = (noise_sigma * rng.gaussian()).abs();
            let p = if target { 1.0 - noise } else { noise };
            ClinicalLabel::new(name.clone(), p.clamp(PROB_EPS, 1.0 - PROB_EPS))
        })
        .collect();
    ClinicalLabelSet::new(labels)
}

/// Independent `U[0, 1)` per label, ignoring the case.
pub fn random_expert_predict(ontology: &[String], rng: &mut DecodeRng) -> Result<ClinicalLabelSet> {
    ClinicalLabelSet::new(
        ontology
            .iter()
            .map(|name| ClinicalLabel::new(name.clone(), rng.uniform()))
            .collect(),
    )
}

#[derive(Clone, Debug)]
pub struct NoisyExpert {
    pub ontology: Vec<String>,
    pub noise_sigma: f64,
    pub flip_rate: f64,
}

impl ExpertBackend for NoisyExpert {
    fn predict(&self, case: &LatentCase, rng: &mut DecodeRng) -> Result<ClinicalLabelSet> {
        noisy_expert_predict(case, &self.ontology, self.noise_sigma, self.flip_rate, rng)
    }
}

#[derive(Clone, Debug)]
pub struct RandomExpert {
    pub ontology: Vec<String>,
}

impl ExpertBackend for RandomExpert {
    fn predict(&self, _case: &LatentCase, rng: &mut DecodeRng) -> Result<ClinicalLabelSet> {
        random_expert_predict(&self.ontology, rng)
    }
}

/// Returns the same recorded label set for every case.
#[derive(Clone, Debug)]
pub struct FixedExpert {
    pub labels: ClinicalLabelSet,
}

impl ExpertBackend for FixedExpert {
    fn predict(&self, _case: &LatentCase, _rng: &mut DecodeRng) -> Result<ClinicalLabelSet> {
        Ok(self.labels.clone())
    }
}

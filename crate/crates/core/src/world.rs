//! Seeded synthetic cases: latent findings, a prompt, and a reference report.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::backends::{ToyReportModel, ToyVocab};
use crate::error::{Error, Result};
use crate::rng::{stream, DecodeRng};
use crate::TokenId;

/// Presence probability, shared by all symptoms or given per symptom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prevalence {
    Uniform(f64),
    PerSymptom(Vec<f64>),
}

impl Prevalence {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Prevalence::Uniform(p) => *p,
            Prevalence::PerSymptom(ps) => ps[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub n_symptoms: usize,
    pub prevalence: Prevalence,
    pub distractor_rate: f64,
    pub fn_bias: f64,
    pub fp_bias: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_symptoms: 14,
            prevalence: Prevalence::Uniform(0.3),
            distractor_rate: 0.1,
            fn_bias: 0.6,
            fp_bias: 0.4,
        }
    }
}

fn probability(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be in [0, 1], got {v}"
        )))
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_symptoms == 0 {
            return Err(Error::InvalidConfig("n_symptoms must be >= 1".into()));
        }
        match &self.prevalence {
            Prevalence::Uniform(p) => probability("prevalence", *p)?,
            Prevalence::PerSymptom(ps) => {
                if ps.len() != self.n_symptoms {
                    return Err(Error::InvalidConfig(format!(
                        "prevalence lists {} values for {} symptoms",
                        ps.len(),
                        self.n_symptoms
                    )));
                }
                for &p in ps {
                    probability("prevalence", p)?;
                }
            }
        }
        probability("distractor_rate", self.distractor_rate)?;
        probability("fn_bias", self.fn_bias)?;
        probability("fp_bias", self.fp_bias)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCase {
    pub id: u64,
    pub truth: Vec<bool>,
    /// Above 0.5 exactly for present symptoms.
    pub severity: Vec<f64>,
    /// Absent symptom named by the misleading history sentence, if any.
    pub distractor: Option<usize>,
    pub prompt: Vec<TokenId>,
}

impl LatentCase {
    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        self.truth
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(|(i, _)| i)
    }
}

/// Draws one case. Per symptom: presence, then a uniform that places the
/// severity in `(0.5, 1]` when present or `(0, 0.5]` when absent. Then the
/// distractor coin and, if it lands, a uniformly chosen absent symptom.
pub fn sample_case(
    params: &WorldParams,
    vocab: &ToyVocab,
    id: u64,
    rng: &mut DecodeRng,
) -> LatentCase {
    let n = params.n_symptoms;
    let mut truth = Vec::with_capacity(n);
    let mut severity = Vec::with_capacity(n);
    for i in 0..n {
        let present = rng.bernoulli(params.prevalence.get(i));
        let u = rng.uniform();
        truth.push(present);
        severity.push(if present {
            1.0 - 0.5 * u
        } else {
            0.5 * (1.0 - u)
        });
    }
    let mut distractor = None;
    if rng.bernoulli(params.distractor_rate) {
        let absent: Vec<usize> = (0..n).filter(|&i| !truth[i]).collect();
        if !absent.is_empty() {
            distractor = Some(absent[rng.below(absent.len())]);
        }
    }
    let prompt = vocab.prompt(distractor);
    LatentCase {
        id,
        truth,
        severity,
        distractor,
        prompt,
    }
}

/// One sentence per present symptom in ontology order, or the fixed negative
/// sentence.
pub fn reference_report(case: &LatentCase, ontology: &[String]) -> String {
    let present: Vec<&str> = case.present().map(|i| ontology[i].as_str()).collect();
    if present.is_empty() {
        return "Findings: no acute findings.".to_string();
    }
    let mut out = String::from("Findings:");
    for name in present {
        out.push(' ');
        out.push_str(name);
        out.push('.');
    }
    out
}

/// A toy vocabulary, its report model and the case distribution.
#[derive(Clone, Debug)]
pub struct World {
    params: WorldParams,
    model: ToyReportModel,
}

impl World {
    pub fn new(params: WorldParams) -> Result<Self> {
        params.validate()?;
        let model = ToyReportModel::new(
            ToyVocab::new(params.n_symptoms),
            params.fn_bias,
            params.fp_bias,
        );
        Ok(Self { params, model })
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn model(&self) -> &ToyReportModel {
        &self.model
    }

    pub fn vocab(&self) -> &ToyVocab {
        self.model.toy_vocab()
    }

    pub fn ontology(&self) -> &[String] {
        self.vocab().symptoms()
    }

    /// Case for episode seed `seed`, drawn from its own stream.
    pub fn case(&self, seed: u64) -> LatentCase {
        let mut rng = DecodeRng::with_stream(seed, stream::WORLD);
        sample_case(&self.params, self.vocab(), seed, &mut rng)
    }

    pub fn reference_report(&self, case: &LatentCase) -> String {
        reference_report(case, self.ontology())
    }
}

pub fn write_cases_jsonl(cases: &[LatentCase], mut out: impl Write) -> Result<()> {
    for c in cases {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_cases_jsonl(reader: impl BufRead) -> Result<Vec<LatentCase>> {
    let mut cases = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        cases.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(cases)
}

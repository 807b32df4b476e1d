//! A closed-grammar report model with injectable miscalibration.
//!
//! Reports look like `Findings: A. B.` or `Findings: no acute findings.`.
//! The only real choices happen at decision slots (right after `Findings:`
//! and after each finished sentence), where the model picks the next symptom
//! or stops. Slot preferences follow the case's severities. Two knobs then
//! distort them:
//!
//! * `fn_bias`: without an anchor in the prompt, every remaining true symptom
//!   loses that fraction of its mass. Part of the removed mass moves to the
//!   stop token, so the model ends reports early.
//! * `fp_bias`: with an anchor in the prompt, that fraction of the stop mass
//!   moves to remaining absent symptoms, so anchored reports over-call.
//!
//! Every token outside the live options, and every option whose share falls
//! below `ROW_EPS`, gets exactly `ROW_EPS`.

use crate::error::Result;
use crate::expert::TokenMap;
use crate::logits::LogitVector;
use crate::world::LatentCase;
use crate::TokenId;

use super::{ModelBackend, StepQuery, Vocab};

/// The 14 CheXpert findings in canonical order.
pub const CHEXPERT_LABELS: [&str; 14] = [
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Opacity",
    "Lung Lesion",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
];

const FIXED_TOKENS: [&str; 19] = [
    "<eos>",
    "<image>",
    "Describe",
    "the",
    "chest",
    "radiograph",
    ".",
    ",",
    "Attention",
    "to",
    "following",
    "clinical",
    "instructions:",
    "History:",
    "suspected",
    "Findings:",
    "no",
    "acute",
    "findings",
];

const EOS: TokenId = 0;
const IMAGE: TokenId = 1;
const DESCRIBE: TokenId = 2;
const THE: TokenId = 3;
const CHEST: TokenId = 4;
const RADIOGRAPH: TokenId = 5;
const PERIOD: TokenId = 6;
const ATTENTION: TokenId = 8;
const HISTORY: TokenId = 13;
const SUSPECTED: TokenId = 14;
const FINDINGS_HEAD: TokenId = 15;
const NO: TokenId = 16;
const ACUTE: TokenId = 17;
const FINDINGS_WORD: TokenId = 18;
const FIRST_SYMPTOM: TokenId = FIXED_TOKENS.len() as TokenId;

/// Floor probability for tokens outside the live options.
pub const ROW_EPS: f64 = 1e-6;
/// Slot score per unit of severity above 0.5.
pub const SHARPNESS: f64 = 16.0;
/// Share of the `fn_bias` mass that moves to the stop token.
pub const STOP_REDIRECT: f64 = 0.4;
/// Slot score added to symptoms named in the history sentence.
pub const DISTRACTOR_BOOST: f64 = 3.0;

/// Word-level vocabulary: fixed filler tokens, then one token per symptom.
#[derive(Clone, Debug)]
pub struct ToyVocab {
    vocab: Vocab,
    symptoms: Vec<String>,
}

impl ToyVocab {
    /// The first `n_symptoms` CheXpert names; extra symptoms are numbered.
    pub fn new(n_symptoms: usize) -> Self {
        let symptoms: Vec<String> = (0..n_symptoms)
            .map(|i| match CHEXPERT_LABELS.get(i) {
                Some(name) => name.to_string(),
                None => format!("Finding{}", i + 1),
            })
            .collect();
        let tokens = FIXED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(symptoms.iter().cloned())
            .collect();
        Self {
            vocab: Vocab::new(tokens, EOS),
            symptoms,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn symptoms(&self) -> &[String] {
        &self.symptoms
    }

    pub fn n_symptoms(&self) -> usize {
        self.symptoms.len()
    }

    pub fn symptom_token(&self, i: usize) -> TokenId {
        FIRST_SYMPTOM + i as TokenId
    }

    pub fn symptom_index(&self, id: TokenId) -> Option<usize> {
        let i = id.checked_sub(FIRST_SYMPTOM)? as usize;
        (i < self.symptoms.len()).then_some(i)
    }

    /// Each symptom name maps to its single token.
    pub fn token_map(&self) -> TokenMap {
        let mut map = TokenMap::new();
        for (i, name) in self.symptoms.iter().enumerate() {
            map.insert(name.clone(), vec![self.symptom_token(i)]);
        }
        map
    }

    /// `<image> Describe the chest radiograph .`, plus
    /// `History: suspected X .` when a distractor is given.
    pub fn prompt(&self, distractor: Option<usize>) -> Vec<TokenId> {
        let mut p = vec![IMAGE, DESCRIBE, THE, CHEST, RADIOGRAPH, PERIOD];
        if let Some(d) = distractor {
            p.extend([HISTORY, SUSPECTED, self.symptom_token(d), PERIOD]);
        }
        p
    }
}

/// Shared, stateless report model. Bind it to a case with [`Self::bind`].
#[derive(Clone, Debug)]
pub struct ToyReportModel {
    vocab: ToyVocab,
    fn_bias: f64,
    fp_bias: f64,
}

/// What the model reads off a context.
struct ContextState {
    anchored: bool,
    suggested: Vec<bool>,
    /// Tokens after the first `Findings:`, or `None` before it.
    generated: Option<Vec<TokenId>>,
}

impl ToyReportModel {
    pub fn new(vocab: ToyVocab, fn_bias: f64, fp_bias: f64) -> Self {
        Self {
            vocab,
            fn_bias,
            fp_bias,
        }
    }

    pub fn toy_vocab(&self) -> &ToyVocab {
        &self.vocab
    }

    pub fn fn_bias(&self) -> f64 {
        self.fn_bias
    }

    pub fn fp_bias(&self) -> f64 {
        self.fp_bias
    }

    pub fn bind<'a>(&'a self, case: &'a LatentCase) -> ToyCaseModel<'a> {
        ToyCaseModel { model: self, case }
    }

    fn read_context(&self, context: &[TokenId]) -> ContextState {
        let head = context.iter().position(|&t| t == FINDINGS_HEAD);
        let prefix = &context[..head.unwrap_or(context.len())];
        let mut suggested = vec![false; self.vocab.n_symptoms()];
        let mut in_history = false;
        for w in prefix.windows(2) {
            if w[0] == HISTORY && w[1] == SUSPECTED {
                in_history = true;
            } else if w[1] == PERIOD {
                in_history = false;
            } else if in_history {
                if let Some(i) = self.vocab.symptom_index(w[1]) {
                    suggested[i] = true;
                }
            }
        }
        ContextState {
            anchored: prefix.contains(&ATTENTION),
            suggested,
            generated: head.map(|h| context[h + 1..].to_vec()),
        }
    }

    /// Next-token distribution for `case` after `context`.
    pub fn row(&self, case: &LatentCase, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.vocab.len();
        let state = self.read_context(context);
        let Some(generated) = state.generated.as_deref() else {
            return single(v, FINDINGS_HEAD);
        };
        let said_no = generated.contains(&NO);
        let mut mentioned = vec![false; self.vocab.n_symptoms()];
        for &t in generated {
            if let Some(i) = self.vocab.symptom_index(t) {
                mentioned[i] = true;
            }
        }
        match generated.last().copied() {
            None => self.slot(case, &state, &mentioned, NO),
            Some(NO) => single(v, ACUTE),
            Some(ACUTE) => single(v, FINDINGS_WORD),
            Some(FINDINGS_WORD) => single(v, PERIOD),
            Some(PERIOD) if !said_no && mentioned.iter().any(|&m| m) => {
                self.slot(case, &state, &mentioned, EOS)
            }
            Some(t) if self.vocab.symptom_index(t).is_some() => single(v, PERIOD),
            Some(_) => single(v, EOS),
        }
    }

    pub fn next_logits(&self, case: &LatentCase, context: &[TokenId]) -> LogitVector {
        let scores = self.row(case, context).into_iter().map(f64::ln).collect();
        LogitVector::new(scores).expect("rows are strictly positive")
    }

    /// Decision between the remaining symptoms and `stop`.
    fn slot(
        &self,
        case: &LatentCase,
        state: &ContextState,
        mentioned: &[bool],
        stop: TokenId,
    ) -> Vec<f64> {
        let remaining: Vec<usize> = (0..mentioned.len()).filter(|&i| !mentioned[i]).collect();
        let mut mass: Vec<f64> = remaining
            .iter()
            .map(|&i| {
                let boost = if state.suggested[i] {
                    DISTRACTOR_BOOST
                } else {
                    0.0
                };
                (SHARPNESS * (case.severity[i] - 0.5) + boost).exp()
            })
            .collect();
        let mut stop_mass = 1.0;
        let total: f64 = mass.iter().sum::<f64>() + stop_mass;
        mass.iter_mut().for_each(|m| *m /= total);
        stop_mass /= total;

        if state.anchored {
            let absent_total: f64 = remaining
                .iter()
                .zip(&mass)
                .filter(|(&i, _)| !case.truth[i])
                .map(|(_, m)| m)
                .sum();
            if absent_total > 0.0 && self.fp_bias > 0.0 {
                let take = self.fp_bias * stop_mass;
                stop_mass -= take;
                for (&i, m) in remaining.iter().zip(mass.iter_mut()) {
                    if !case.truth[i] {
                        *m += take * *m / absent_total;
                    }
                }
            }
        } else {
            for (&i, m) in remaining.iter().zip(mass.iter_mut()) {
                if case.truth[i] {
                    let d = *m * self.fn_bias;
                    *m -= d;
                    stop_mass += STOP_REDIRECT * d;
                }
            }
        }

        let total: f64 = mass.iter().sum::<f64>() + stop_mass;
        let mut free: Vec<(TokenId, f64)> = Vec::with_capacity(remaining.len() + 1);
        let options = remaining
            .iter()
            .map(|&i| self.vocab.symptom_token(i))
            .zip(mass)
            .chain([(stop, stop_mass)]);
        for (id, m) in options {
            if m / total >= ROW_EPS {
                free.push((id, m));
            }
        }
        finish_row(self.vocab.vocab.len(), &free)
    }
}

/// Row with all live mass on one token.
fn single(v: usize, id: TokenId) -> Vec<f64> {
    finish_row(v, &[(id, 1.0)])
}

/// Tokens outside `free` get exactly `ROW_EPS`; the free tokens share the
/// rest in proportion to their weights.
fn finish_row(v: usize, free: &[(TokenId, f64)]) -> Vec<f64> {
    let mut row = vec![ROW_EPS; v];
    let budget = 1.0 - (v - free.len()) as f64 * ROW_EPS;
    let total: f64 = free.iter().map(|(_, w)| w).sum();
    for &(id, w) in free {
        row[id as usize] = budget * w / total;
    }
    row
}

/// A [`ToyReportModel`] bound to one case.
#[derive(Clone, Copy, Debug)]
pub struct ToyCaseModel<'a> {
    model: &'a ToyReportModel,
    case: &'a LatentCase,
}

impl ModelBackend for ToyCaseModel<'_> {
    fn vocab(&self) -> &Vocab {
        &self.model.vocab.vocab
    }

    fn next_logits(&self, query: &StepQuery<'_>) -> Result<LogitVector> {
        Ok(self.model.next_logits(self.case, query.context))
    }
}

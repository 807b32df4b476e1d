//! Pluggable sources of per-step logits and expert label sets.

mod experts;
mod toy;
mod trace;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::logits::LogitVector;
use crate::TokenId;

pub use experts::{
    noisy_expert_predict, random_expert_predict, ExpertBackend, FixedExpert, NoisyExpert,
    RandomExpert,
};
pub use toy::{ToyCaseModel, ToyReportModel, ToyVocab, CHEXPERT_LABELS};
pub use trace::{replay_next_logits, LogitsTrace, ReplayBackend, TraceHeader, TraceRecord};
pub use vocab::Vocab;

/// Which context a logits query belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Instruction plus generated suffix.
    Original,
    /// Instruction, anchor prompt, generated suffix.
    Anchored,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Original => "original",
            Branch::Anchored => "anchored",
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepQuery<'a> {
    /// Number of tokens generated so far.
    pub step: usize,
    pub branch: Branch,
    pub context: &'a [TokenId],
}

/// A language model seen only through its next-token logits.
///
/// Implementations must be deterministic in the query. Built-in backends are
/// stateless and `Sync`, so one instance may serve concurrent generations.
pub trait ModelBackend: Sync {
    fn vocab(&self) -> &Vocab;

    fn next_logits(&self, query: &StepQuery<'_>) -> Result<LogitVector>;

    /// Tokenizes the anchor prompt appended to the anchored branch.
    fn encode_anchor(&self, text: &str) -> Result<Vec<TokenId>> {
        self.vocab().encode(text)
    }
}

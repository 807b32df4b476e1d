//! Stateless per-step adjustment for callers that own their generation loop.
//!
//! The caller keeps both contexts (instruction and instruction plus anchor),
//! runs its model on each, and passes the two raw logit rows here. The
//! returned row is the fused `z_ccd`; sampling stays with the caller.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{DecodeConfig, StepFusion};
use crate::error::Result;
use crate::expert::{BiasScope, ClinicalLabel, ClinicalLabelSet, Gamma, TokenMap};
use crate::logits::LogitVector;
use crate::processors::ProcessorConfig;
use crate::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepAdjustRequest {
    #[serde(with = "crate::logits::score_vec")]
    pub z_o: Vec<f64>,
    #[serde(with = "crate::logits::score_vec")]
    pub z_c: Vec<f64>,
    /// Expert probability per label name.
    pub labels: BTreeMap<String, f64>,
    pub token_map: TokenMap,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: Gamma,
    pub tau: f64,
    pub bias_scope: BiasScope,
    /// Ids generated so far, used by the repetition penalty.
    pub history: Vec<TokenId>,
    pub generated_len: usize,
    pub processors: ProcessorConfig,
}

impl Default for StepAdjustRequest {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Self {
            z_o: Vec::new(),
            z_c: Vec::new(),
            labels: BTreeMap::new(),
            token_map: TokenMap::new(),
            alpha: d.alpha,
            beta: d.beta,
            gamma: d.gamma,
            tau: d.tau,
            bias_scope: d.bias_scope,
            history: Vec::new(),
            generated_len: 0,
            processors: ProcessorConfig::default(),
        }
    }
}

impl StepAdjustRequest {
    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            tau: self.tau,
            bias_scope: self.bias_scope,
            processors: self.processors.clone(),
            ..DecodeConfig::default()
        }
    }

    pub fn label_set(&self) -> Result<ClinicalLabelSet> {
        ClinicalLabelSet::new(
            self.labels
                .iter()
                .map(|(name, &p)| ClinicalLabel::new(name.clone(), p))
                .collect(),
        )
    }
}

/// Fused next-token logits for one step. `-inf` marks banned tokens.
pub fn adjusted_logits(req: &StepAdjustRequest) -> Result<Vec<f64>> {
    let z_o = LogitVector::new(req.z_o.clone())?;
    let z_c = LogitVector::new(req.z_c.clone())?;
    let fusion = StepFusion::new(
        &req.decode_config(),
        &req.label_set()?,
        &req.token_map,
        z_o.len(),
    )?;
    let step = fusion.fuse(&z_o, &z_c, &req.history, req.generated_len)?;
    Ok(step.ccd.into_vec())
}

//! The dual-branch generation loop.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::{Branch, ModelBackend, StepQuery};
use crate::error::{Error, Result};
use crate::expert::{
    build_anchor_prompt_with, build_bias_map, filter_labels, BiasMap, BiasScope, ClinicalLabelSet,
    Gamma, TokenMap, DEFAULT_ANCHOR_PREFIX,
};
use crate::logits::{argmax, interpolate, log_softmax, softmax, LogitVector};
use crate::processors::{run_stack, ProcessorConfig};
use crate::rng::{stream, DecodeRng};
use crate::TokenId;

/// Which fusion stages are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Anchor contrast only; the expert bias is zeroed.
    #[serde(alias = "scd-only")]
    ScdOnly,
    /// Expert bias only; `alpha` is forced to 0.
    #[serde(alias = "ecd-only")]
    EcdOnly,
    /// Plain processed decoding of the original branch.
    Off,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::ScdOnly,
        Ablation::EcdOnly,
        Ablation::Off,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::ScdOnly => "scd_only",
            Ablation::EcdOnly => "ecd_only",
            Ablation::Off => "off",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "scd_only" | "scd-only" => Ok(Ablation::ScdOnly),
            "ecd_only" | "ecd-only" => Ok(Ablation::EcdOnly),
            "off" => Ok(Ablation::Off),
            other => Err(Error::InvalidConfig(format!("unknown ablation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample,
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "sample" => Ok(DecodeMode::Sample),
            other => Err(Error::InvalidConfig(format!(
                "unknown decode mode `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: Gamma,
    pub tau: f64,
    pub bias_scope: BiasScope,
    pub mode: DecodeMode,
    pub seed: u64,
    pub max_tokens: usize,
    pub processors: ProcessorConfig,
    pub ablation: Ablation,
    pub anchor_prefix: String,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            gamma: Gamma::default(),
            tau: 0.5,
            bias_scope: BiasScope::All,
            mode: DecodeMode::Greedy,
            seed: 0,
            max_tokens: 48,
            processors: ProcessorConfig::default(),
            ablation: Ablation::Full,
            anchor_prefix: DEFAULT_ANCHOR_PREFIX.to_string(),
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be in [0, 1], got {v}"
        )))
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        unit_interval("alpha", self.alpha)?;
        unit_interval("beta", self.beta)?;
        unit_interval("tau", self.tau)?;
        if let Gamma::Ratio(g) = self.gamma {
            Gamma::new(g)?;
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidConfig("max_tokens must be > 0".into()));
        }
        self.processors.validate()
    }

    /// `(alpha, beta, keep_bias)` after applying the ablation.
    pub fn effective_weights(&self) -> (f64, f64, bool) {
        match self.ablation {
            Ablation::Full => (self.alpha, self.beta, true),
            Ablation::ScdOnly => (self.alpha, self.beta, false),
            Ablation::EcdOnly => (0.0, self.beta, true),
            Ablation::Off => (0.0, 0.0, false),
        }
    }
}

/// Intermediate vectors of one fused step.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedStep {
    pub scd: LogitVector,
    pub scd_processed: LogitVector,
    pub ecd: LogitVector,
    pub ccd: LogitVector,
}

/// Per-step logit fusion with everything fixed for one generation: effective
/// weights, bias map and processor stack.
#[derive(Clone, Debug)]
pub struct StepFusion {
    alpha: f64,
    beta: f64,
    bias: BiasMap,
    processors: ProcessorConfig,
}

impl StepFusion {
    pub fn new(
        cfg: &DecodeConfig,
        labels: &ClinicalLabelSet,
        token_map: &TokenMap,
        vocab_size: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let (alpha, beta, keep_bias) = cfg.effective_weights();
        let bias = if keep_bias {
            let scoped = match cfg.bias_scope {
                BiasScope::All => labels.clone(),
                BiasScope::Selected => filter_labels(labels, cfg.tau),
            };
            build_bias_map(&scoped, token_map, cfg.gamma, vocab_size)?
        } else {
            BiasMap::zeros(vocab_size)
        };
        Ok(Self {
            alpha,
            beta,
            bias,
            processors: cfg.processors.clone(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bias(&self) -> &BiasMap {
        &self.bias
    }

    pub fn fuse(
        &self,
        z_o: &LogitVector,
        z_c: &LogitVector,
        history: &[TokenId],
        generated_len: usize,
    ) -> Result<FusedStep> {
        let n = self.bias.len();
        for z in [z_o, z_c] {
            if z.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: z.len(),
                });
            }
        }
        let scd = scd_step(z_o, z_c, self.alpha)?;
        let scd_processed = run_stack(&scd, history, generated_len, &self.processors)?;
        let ecd = ecd_step(&scd, &self.bias);
        let ccd = interpolate(&scd_processed, &ecd, self.beta)?;
        if ccd.is_degenerate() {
            return Err(Error::DegenerateLogits);
        }
        Ok(FusedStep {
            scd,
            scd_processed,
            ecd,
            ccd,
        })
    }
}

pub fn scd_step(z_o: &LogitVector, z_c: &LogitVector, alpha: f64) -> Result<LogitVector> {
    let lo = log_softmax(z_o)?.into_logits();
    let lc = log_softmax(z_c)?.into_logits();
    interpolate(&lo, &lc, alpha)
}

pub fn ecd_step(z_scd: &LogitVector, bias: &BiasMap) -> LogitVector {
    let b = bias.as_slice();
    z_scd.map(|i, v| v + b[i])
}

pub fn ccd_step(
    z_scd_processed: &LogitVector,
    z_ecd: &LogitVector,
    beta: f64,
) -> Result<LogitVector> {
    interpolate(z_scd_processed, z_ecd, beta)
}

pub fn next_token(z: &LogitVector, mode: DecodeMode, rng: &mut DecodeRng) -> Result<TokenId> {
    match mode {
        DecodeMode::Greedy => argmax(z),
        DecodeMode::Sample => {
            let p = softmax(z)?;
            rng.sample_index(p.as_slice())
                .map(|i| i as TokenId)
                .ok_or(Error::DegenerateLogits)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub z_o: LogitVector,
    pub z_c: LogitVector,
    pub scd: LogitVector,
    pub scd_processed: LogitVector,
    pub ecd: LogitVector,
    pub ccd: LogitVector,
    pub chosen: TokenId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Generated ids, including the terminating eos when one was produced.
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub anchor: String,
    /// Filled only when tracing is enabled.
    pub steps: Vec<StepRecord>,
}

impl Generation {
    /// Writes one line per (step, stage) with stages in pipeline order.
    pub fn write_step_trace(&self, mut out: impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            step: usize,
            stage: &'a str,
            logits: &'a LogitVector,
            chosen: TokenId,
        }
        for r in &self.steps {
            let stages = [
                ("o", &r.z_o),
                ("c", &r.z_c),
                ("scd", &r.scd),
                ("scd_processed", &r.scd_processed),
                ("ecd", &r.ecd),
                ("ccd", &r.ccd),
            ];
            for (stage, logits) in stages {
                let line = Line {
                    step: r.step,
                    stage,
                    logits,
                    chosen: r.chosen,
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// Runs both branches in lockstep and fuses their logits each step.
#[derive(Clone, Debug)]
pub struct CcdEngine {
    cfg: DecodeConfig,
    token_map: TokenMap,
    tracing: bool,
}

impl CcdEngine {
    pub fn new(cfg: DecodeConfig, token_map: TokenMap) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            token_map,
            tracing: false,
        })
    }

    /// Keep full per-step records in the returned `Generation`.
    pub fn with_tracing(mut self, on: bool) -> Self {
        self.tracing = on;
        self
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.cfg
    }

    pub fn token_map(&self) -> &TokenMap {
        &self.token_map
    }

    pub fn anchor_text(&self, labels: &ClinicalLabelSet) -> String {
        build_anchor_prompt_with(
            &self.cfg.anchor_prefix,
            &filter_labels(labels, self.cfg.tau),
        )
    }

    pub fn fusion(&self, labels: &ClinicalLabelSet, vocab_size: usize) -> Result<StepFusion> {
        StepFusion::new(&self.cfg, labels, &self.token_map, vocab_size)
    }

    pub fn generate(
        &self,
        model: &dyn ModelBackend,
        labels: &ClinicalLabelSet,
        prompt: &[TokenId],
    ) -> Result<Generation> {
        self.generate_seeded(model, labels, prompt, self.cfg.seed)
    }

    pub fn generate_seeded(
        &self,
        model: &dyn ModelBackend,
        labels: &ClinicalLabelSet,
        prompt: &[TokenId],
        seed: u64,
    ) -> Result<Generation> {
        let vocab = model.vocab();
        let vocab_size = vocab.len();
        self.token_map.validate(vocab_size)?;
        let fusion = self.fusion(labels, vocab_size)?;
        let anchor = self.anchor_text(labels);
        let anchor_ids = if anchor.is_empty() {
            Vec::new()
        } else {
            model.encode_anchor(&anchor)?
        };

        let mut original: Vec<TokenId> = prompt.to_vec();
        let mut anchored: Vec<TokenId> = prompt.iter().chain(&anchor_ids).copied().collect();
        let mut generated: Vec<TokenId> = Vec::new();
        let mut steps = Vec::new();
        let mut rng = DecodeRng::with_stream(seed, stream::DECODE);

        while generated.len() < self.cfg.max_tokens {
            let step = generated.len();
            let query = |branch, context| -> Result<LogitVector> {
                let z = model
                    .next_logits(&StepQuery {
                        step,
                        branch,
                        context,
                    })
                    .map_err(|e| e.at_step(step))?;
                if z.len() != vocab_size {
                    return Err(Error::LengthMismatch {
                        expected: vocab_size,
                        got: z.len(),
                    }
                    .at_step(step));
                }
                Ok(z)
            };
            let z_o = query(Branch::Original, &original)?;
            let z_c = query(Branch::Anchored, &anchored)?;
            let fused = fusion
                .fuse(&z_o, &z_c, &generated, step)
                .map_err(|e| e.at_step(step))?;
            let chosen =
                next_token(&fused.ccd, self.cfg.mode, &mut rng).map_err(|e| e.at_step(step))?;

            original.push(chosen);
            anchored.push(chosen);
            generated.push(chosen);
            debug_assert!(original.ends_with(&generated) && anchored.ends_with(&generated));

            if self.tracing {
                steps.push(StepRecord {
                    step,
                    z_o,
                    z_c,
                    scd: fused.scd,
                    scd_processed: fused.scd_processed,
                    ecd: fused.ecd,
                    ccd: fused.ccd,
                    chosen,
                });
            }
            if chosen == vocab.eos() {
                break;
            }
        }

        Ok(Generation {
            text: vocab.decode(&generated),
            tokens: generated,
            anchor,
            steps,
        })
    }
}

/// Single-branch decoding: the processor stack on `log_softmax(z_o)`, no
/// anchor, no bias. Reference for the reduction property.
pub fn plain_decode(
    model: &dyn ModelBackend,
    prompt: &[TokenId],
    processors: &ProcessorConfig,
    mode: DecodeMode,
    max_tokens: usize,
    seed: u64,
) -> Result<Vec<TokenId>> {
    let eos = model.vocab().eos();
    let mut context = prompt.to_vec();
    let mut generated = Vec::new();
    let mut rng = DecodeRng::with_stream(seed, stream::DECODE);
    while generated.len() < max_tokens {
        let step = generated.len();
        let z = model
            .next_logits(&StepQuery {
                step,
                branch: Branch::Original,
                context: &context,
            })
            .map_err(|e| e.at_step(step))?;
        let z = run_stack(
            &log_softmax(&z)?.into_logits(),
            &generated,
            step,
            processors,
        )?;
        let t = next_token(&z, mode, &mut rng)?;
        context.push(t);
        generated.push(t);
        if t == eos {
            break;
        }
    }
    Ok(generated)
}

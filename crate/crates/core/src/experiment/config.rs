use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{Ablation, DecodeConfig, DecodeMode};
use crate::error::{Error, Result};
use crate::expert::{BiasScope, Gamma, DEFAULT_ANCHOR_PREFIX};
use crate::processors::ProcessorConfig;
use crate::world::{Prevalence, WorldParams};
use crate::TokenId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    Replay,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpertKind {
    #[default]
    Noisy,
    Random,
    #[serde(alias = "replay_file")]
    ReplayFile,
}

impl ExpertKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExpertKind::Noisy => "noisy",
            ExpertKind::Random => "random",
            ExpertKind::ReplayFile => "replay-file",
        }
    }
}

impl fmt::Display for ExpertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExpertKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy" => Ok(ExpertKind::Noisy),
            "random" => Ok(ExpertKind::Random),
            "replay-file" | "replay_file" => Ok(ExpertKind::ReplayFile),
            other => Err(Error::InvalidConfig(format!("unknown expert `{other}`"))),
        }
    }
}

/// Flat experiment description. Every key is optional in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub episodes: usize,
    pub backend: BackendKind,
    /// Trace file for the replay backend.
    pub trace_path: Option<PathBuf>,
    pub expert: ExpertKind,
    pub noise_sigma: f64,
    pub flip_rate: f64,
    /// Label file for the replay-file expert.
    pub labels_path: Option<PathBuf>,

    pub n_symptoms: usize,
    pub prevalence: Prevalence,
    pub distractor_rate: f64,
    pub fn_bias: f64,
    pub fp_bias: f64,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: Gamma,
    pub tau: f64,
    pub bias_scope: BiasScope,
    pub mode: DecodeMode,
    pub max_tokens: usize,
    pub ablation: Ablation,
    pub anchor_prefix: String,

    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub min_length: usize,

    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let world = WorldParams::default();
        let decode = DecodeConfig::default();
        let proc = ProcessorConfig::default();
        Self {
            seed: 0,
            episodes: 200,
            backend: BackendKind::Toy,
            trace_path: None,
            expert: ExpertKind::Noisy,
            noise_sigma: 0.0,
            flip_rate: 0.0,
            labels_path: None,
            n_symptoms: world.n_symptoms,
            prevalence: world.prevalence,
            distractor_rate: world.distractor_rate,
            fn_bias: world.fn_bias,
            fp_bias: world.fp_bias,
            alpha: decode.alpha,
            beta: decode.beta,
            gamma: decode.gamma,
            tau: decode.tau,
            bias_scope: decode.bias_scope,
            mode: decode.mode,
            max_tokens: decode.max_tokens,
            ablation: decode.ablation,
            anchor_prefix: DEFAULT_ANCHOR_PREFIX.to_string(),
            temperature: proc.temperature,
            top_k: proc.top_k,
            top_p: proc.top_p,
            repetition_penalty: proc.repetition_penalty,
            min_length: proc.min_length,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(Error::InvalidConfig(format!(
                "flip_rate must be in [0, 1], got {}",
                self.flip_rate
            )));
        }
        if self.backend == BackendKind::Replay && self.trace_path.is_none() {
            return Err(Error::InvalidConfig(
                "replay backend needs trace_path".into(),
            ));
        }
        if self.expert == ExpertKind::ReplayFile && self.labels_path.is_none() {
            return Err(Error::InvalidConfig(
                "replay-file expert needs labels_path".into(),
            ));
        }
        self.world_params().validate()?;
        self.decode_config(0).validate()
    }

    pub fn world_params(&self) -> WorldParams {
        WorldParams {
            n_symptoms: self.n_symptoms,
            prevalence: self.prevalence.clone(),
            distractor_rate: self.distractor_rate,
            fn_bias: self.fn_bias,
            fp_bias: self.fp_bias,
        }
    }

    pub fn decode_config(&self, eos: TokenId) -> DecodeConfig {
        DecodeConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            tau: self.tau,
            bias_scope: self.bias_scope,
            mode: self.mode,
            seed: self.seed,
            max_tokens: self.max_tokens,
            processors: ProcessorConfig {
                temperature: self.temperature,
                top_k: self.top_k,
                top_p: self.top_p,
                repetition_penalty: self.repetition_penalty,
                min_length: self.min_length,
                eos_token_id: eos,
            },
            ablation: self.ablation,
            anchor_prefix: self.anchor_prefix.clone(),
        }
    }
}

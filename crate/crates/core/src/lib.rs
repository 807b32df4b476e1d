//! Dual-branch contrastive decoding guided by an expert classifier.
//!
//! At each step the engine queries a model on two contexts that share the
//! generated suffix: the plain instruction, and the instruction followed by an
//! anchor prompt listing the expert's confident findings. The two
//! log-probability vectors are interpolated, the standard processor stack runs
//! on the result, and a clipped expert log-odds bias pulls the final logits
//! toward findings the expert supports.
//!
//! ```
//! use ccd::{adjusted_logits, StepAdjustRequest, TokenMap};
//!
//! let mut token_map = TokenMap::new();
//! token_map.insert("Edema", vec![2]);
//! let req = StepAdjustRequest {
//!     z_o: vec![1.0, 0.0, 0.5],
//!     z_c: vec![0.0, 0.0, 2.0],
//!     labels: [("Edema".to_string(), 0.9)].into_iter().collect(),
//!     token_map,
//!     ..StepAdjustRequest::default()
//! };
//! let z = adjusted_logits(&req).unwrap();
//! assert_eq!(z.len(), 3);
//! ```

pub mod adjust;
pub mod backends;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod expert;
pub mod logits;
pub mod metrics;
pub mod processors;
pub mod rng;
pub mod world;

/// Vocabulary index.
pub type TokenId = u32;

pub use adjust::{adjusted_logits, StepAdjustRequest};
pub use backends::{Branch, ModelBackend, StepQuery, Vocab};
pub use engine::{
    Ablation, CcdEngine, DecodeConfig, DecodeMode, Generation, StepFusion, StepRecord,
};
pub use error::{Error, Result};
pub use expert::{BiasMap, BiasScope, ClinicalLabel, ClinicalLabelSet, Gamma, TokenMap};
pub use logits::{LogProbVector, LogitVector, ProbVector};
pub use processors::ProcessorConfig;
pub use rng::DecodeRng;

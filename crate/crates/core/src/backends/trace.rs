//! Recorded dual-branch logits and a backend that replays them.
//!
//! File layout: one JSON header line, then one JSON record per
//! (step, branch), steps ascending and both branches present for every step.
//!
//! ```text
//! {"vocab_size":3,"tokens":["<eos>","a","b"],"eos":0,"token_map":{"a":[1]}}
//! {"step":0,"branch":"original","logits":[0.5,-1.0,"-inf"]}
//! {"step":0,"branch":"anchored","logits":[0.25,1.0,"-inf"]}
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::Generation;
use crate::error::{Error, Result};
use crate::expert::{ClinicalLabelSet, TokenMap};
use crate::logits::LogitVector;
use crate::TokenId;

use super::{Branch, ModelBackend, StepQuery, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub vocab_size: usize,
    pub tokens: Vec<String>,
    pub eos: TokenId,
    pub token_map: TokenMap,
    /// Expert labels used when the trace was captured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<ClinicalLabelSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub step: usize,
    pub branch: Branch,
    pub logits: LogitVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogitsTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl LogitsTrace {
    /// Checks header consistency, record lengths, and step layout.
    pub fn new(header: TraceHeader, records: Vec<TraceRecord>) -> Result<Self> {
        let v = header.vocab_size;
        if header.tokens.len() != v {
            return Err(Error::VocabMismatch(format!(
                "header lists {} tokens for vocab_size {v}",
                header.tokens.len()
            )));
        }
        if header.eos as usize >= v {
            return Err(Error::TokenOutOfRange {
                id: header.eos,
                vocab_size: v,
            });
        }
        header.token_map.validate(v)?;
        if !records.len().is_multiple_of(2) {
            return Err(Error::TraceExhausted {
                step: records.len() / 2,
                branch: "pair".into(),
            });
        }
        for (k, pair) in records.chunks(2).enumerate() {
            let mut branches = [pair[0].branch, pair[1].branch];
            branches.sort();
            if pair.iter().any(|r| r.step != k) || branches != [Branch::Original, Branch::Anchored]
            {
                return Err(Error::Parse {
                    line: 2 * k + 2,
                    msg: format!("expected both branches for step {k}"),
                });
            }
            for r in pair {
                if r.logits.len() != v {
                    return Err(Error::LengthMismatch {
                        expected: v,
                        got: r.logits.len(),
                    });
                }
            }
        }
        Ok(Self { header, records })
    }

    /// Trace of a traced generation's raw branch logits.
    pub fn from_generation(
        vocab: &Vocab,
        token_map: &TokenMap,
        labels: Option<&ClinicalLabelSet>,
        generation: &Generation,
    ) -> Result<Self> {
        let header = TraceHeader {
            vocab_size: vocab.len(),
            tokens: vocab.tokens().to_vec(),
            eos: vocab.eos(),
            token_map: token_map.clone(),
            labels: labels.cloned(),
        };
        let records = generation
            .steps
            .iter()
            .flat_map(|s| {
                [
                    TraceRecord {
                        step: s.step,
                        branch: Branch::Original,
                        logits: s.z_o.clone(),
                    },
                    TraceRecord {
                        step: s.step,
                        branch: Branch::Anchored,
                        logits: s.z_c.clone(),
                    },
                ]
            })
            .collect();
        Self::new(header, records)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (i, head) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let header: TraceHeader = serde_json::from_str(head).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let records = lines
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<TraceRecord>>>()?;
        Self::new(header, records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_jsonl())?)
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.header.tokens.clone(), self.header.eos)
    }

    pub fn steps(&self) -> usize {
        self.records.len() / 2
    }
}

/// Stored logits for `(step, branch)`.
pub fn replay_next_logits(trace: &LogitsTrace, step: usize, branch: Branch) -> Result<LogitVector> {
    trace
        .records
        .iter()
        .find(|r| r.step == step && r.branch == branch)
        .map(|r| r.logits.clone())
        .ok_or(Error::TraceExhausted {
            step,
            branch: branch.to_string(),
        })
}

/// Serves recorded logits by (step, branch), ignoring context contents.
#[derive(Clone, Debug)]
pub struct ReplayBackend {
    trace: LogitsTrace,
    vocab: Vocab,
    index: HashMap<(usize, Branch), usize>,
}

impl ReplayBackend {
    pub fn new(trace: LogitsTrace) -> Self {
        let vocab = trace.vocab();
        let index = trace
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.step, r.branch), i))
            .collect();
        Self {
            trace,
            vocab,
            index,
        }
    }

    /// Fails unless the trace vocabulary equals the session vocabulary.
    pub fn for_session(trace: LogitsTrace, session: &Vocab) -> Result<Self> {
        let replay = Self::new(trace);
        if &replay.vocab != session {
            return Err(Error::VocabMismatch(format!(
                "trace has {} tokens, session has {}",
                replay.vocab.len(),
                session.len()
            )));
        }
        Ok(replay)
    }

    pub fn trace(&self) -> &LogitsTrace {
        &self.trace
    }
}

impl ModelBackend for ReplayBackend {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_logits(&self, query: &StepQuery<'_>) -> Result<LogitVector> {
        self.index
            .get(&(query.step, query.branch))
            .map(|&i| self.trace.records[i].logits.clone())
            .ok_or(Error::TraceExhausted {
                step: query.step,
                branch: query.branch.to_string(),
            })
    }

    /// Recorded logits already reflect the anchor.
    fn encode_anchor(&self, _text: &str) -> Result<Vec<TokenId>> {
        Ok(Vec::new())
    }
}

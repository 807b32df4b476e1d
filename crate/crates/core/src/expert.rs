//! Turns an expert classifier's label probabilities into the anchor prompt
//! and the per-token logit bias.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before the
/// log-odds transform.
pub const PROB_EPS: f64 = 1e-6;

pub const DEFAULT_ANCHOR_PREFIX: &str = "Attention to the following clinical instructions: ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalLabel {
    pub name: String,
    pub prob: f64,
}

impl ClinicalLabel {
    pub fn new(name: impl Into<String>, prob: f64) -> Self {
        Self {
            name: name.into(),
            prob,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClinicalLabel>", into = "Vec<ClinicalLabel>")]
pub struct ClinicalLabelSet {
    labels: Vec<ClinicalLabel>,
}

impl TryFrom<Vec<ClinicalLabel>> for ClinicalLabelSet {
    type Error = Error;

    fn try_from(labels: Vec<ClinicalLabel>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<ClinicalLabelSet> for Vec<ClinicalLabel> {
    fn from(set: ClinicalLabelSet) -> Self {
        set.labels
    }
}

impl ClinicalLabelSet {
    pub fn new(labels: Vec<ClinicalLabel>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &labels {
            if l.name.is_empty() {
                return Err(Error::InvalidLabels("empty label name".into()));
            }
            if !(0.0..=1.0).contains(&l.prob) {
                return Err(Error::InvalidLabels(format!(
                    "probability {} for `{}` outside [0, 1]",
                    l.prob, l.name
                )));
            }
            if !seen.insert(l.name.as_str()) {
                return Err(Error::InvalidLabels(format!(
                    "duplicate label `{}`",
                    l.name
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(n, p)| ClinicalLabel::new(n, p))
                .collect(),
        )
    }

    pub fn labels(&self) -> &[ClinicalLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.name.as_str())
    }

    /// Reads one `{"name": .., "prob": ..}` record per nonblank line.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut labels = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let label: ClinicalLabel = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            labels.push(label);
        }
        Self::new(labels)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for l in &self.labels {
            out.push_str(&serde_json::to_string(l).expect("label serializes"));
            out.push('\n');
        }
        out
    }
}

/// Labels with `prob > tau`, ordered by probability descending and then by
/// name.
pub fn filter_labels(set: &ClinicalLabelSet, tau: f64) -> ClinicalLabelSet {
    let mut labels: Vec<ClinicalLabel> = set
        .labels
        .iter()
        .filter(|l| l.prob > tau)
        .cloned()
        .collect();
    labels.sort_by(|a, b| b.prob.total_cmp(&a.prob).then_with(|| a.name.cmp(&b.name)));
    ClinicalLabelSet { labels }
}

pub fn build_anchor_prompt(selected: &ClinicalLabelSet) -> String {
    build_anchor_prompt_with(DEFAULT_ANCHOR_PREFIX, selected)
}

/// Empty selection yields an empty anchor.
pub fn build_anchor_prompt_with(prefix: &str, selected: &ClinicalLabelSet) -> String {
    if selected.is_empty() {
        return String::new();
    }
    let names: Vec<&str> = selected.names().collect();
    format!("{prefix}{}", names.join(", "))
}

/// Log-odds of an expert probability.
pub fn label_bias(s: f64) -> f64 {
    let s = s.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (s / (1.0 - s)).ln()
}

/// Likelihood-ratio cap on the expert bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gamma {
    Ratio(f64),
    /// No clipping at all.
    Disabled,
}

impl Gamma {
    pub fn new(ratio: f64) -> Result<Self> {
        if ratio > 1.0 && ratio.is_finite() {
            Ok(Gamma::Ratio(ratio))
        } else {
            Err(Error::InvalidConfig(format!(
                "gamma must be > 1, got {ratio}"
            )))
        }
    }

    pub fn max_bias(self) -> f64 {
        match self {
            Gamma::Ratio(g) => g.ln(),
            Gamma::Disabled => f64::INFINITY,
        }
    }

    /// Sort key for sweep output; `Disabled` orders last.
    pub fn sort_key(self) -> f64 {
        match self {
            Gamma::Ratio(g) => g,
            Gamma::Disabled => f64::INFINITY,
        }
    }
}

impl Default for Gamma {
    fn default() -> Self {
        Gamma::Ratio(10.0)
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Ratio(g) => write!(f, "{g}"),
            Gamma::Disabled => f.write_str("off"),
        }
    }
}

impl FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" | "disabled" | "null" | "none" => Ok(Gamma::Disabled),
            other => {
                let g: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad gamma `{other}`")))?;
                Gamma::new(g)
            }
        }
    }
}

impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Ratio(g) => s.serialize_f64(*g),
            Gamma::Disabled => s.serialize_str("off"),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(g) => Gamma::new(g).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

pub fn clip_bias(b: f64, gamma: Gamma) -> f64 {
    let max = gamma.max_bias();
    b.clamp(-max, max)
}

/// Which labels contribute to the bias map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasScope {
    #[default]
    All,
    /// Only labels that pass the threshold.
    Selected,
}

impl FromStr for BiasScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(BiasScope::All),
            "selected" => Ok(BiasScope::Selected),
            other => Err(Error::InvalidConfig(format!("bad bias_scope `{other}`"))),
        }
    }
}

/// Label name to the vocabulary ids that realise it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenMap(BTreeMap<String, Vec<TokenId>>);

impl TokenMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, ids: Vec<TokenId>) {
        self.0.insert(label.into(), ids);
    }

    pub fn get(&self, label: &str) -> Option<&[TokenId]> {
        self.0.get(label).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[TokenId])> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for ids in self.0.values() {
            if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(Error::TokenOutOfRange { id, vocab_size });
            }
        }
        Ok(())
    }

    /// `<label>\t<id>,<id>,...` per line.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut map = TokenMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (name, ids) = line
                .split_once('\t')
                .ok_or_else(|| err("expected `<label>\\t<ids>`".into()))?;
            if name.is_empty() {
                return Err(err("empty label name".into()));
            }
            let ids = ids
                .split(',')
                .map(|t| t.trim().parse::<TokenId>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(e.to_string()))?;
            if map.0.insert(name.to_string(), ids).is_some() {
                return Err(err(format!("duplicate label `{name}`")));
            }
        }
        Ok(map)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, ids) in &self.0 {
            let ids: Vec<String> = ids.iter().map(ToString::to_string).collect();
            out.push_str(name);
            out.push('\t');
            out.push_str(&ids.join(","));
            out.push('\n');
        }
        out
    }
}

/// Additive bias per token id. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasMap(Vec<f64>);

impl BiasMap {
    pub fn zeros(vocab_size: usize) -> Self {
        Self(vec![0.0; vocab_size])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0.0)
    }
}

/// Clips each label's log-odds independently and accumulates it onto that
/// label's tokens. Every label in `labels` contributes, above threshold or
/// not.
pub fn build_bias_map(
    labels: &ClinicalLabelSet,
    token_map: &TokenMap,
    gamma: Gamma,
    vocab_size: usize,
) -> Result<BiasMap> {
    let mut bias = vec![0.0; vocab_size];
    for label in labels.labels() {
        let ids = token_map
            .get(&label.name)
            .ok_or_else(|| Error::UnmappedLabel(label.name.clone()))?;
        let b = clip_bias(label_bias(label.prob), gamma);
        for &id in ids {
            let slot = bias
                .get_mut(id as usize)
                .ok_or(Error::TokenOutOfRange { id, vocab_size })?;
            *slot += b;
        }
    }
    Ok(BiasMap(bias))
}

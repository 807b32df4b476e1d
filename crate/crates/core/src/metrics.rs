//! Symptom mention scoring and ROUGE-L for generated reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token that negates the symptom immediately after it.
pub const NEGATION: &str = "no";

/// Whitespace words with trailing `.`, `,` and `;` split off as their own
/// tokens. Colons stay attached, so `Findings:` is one token.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let trimmed = word.trim_end_matches(['.', ',', ';']);
        if !trimmed.is_empty() {
            out.push(trimmed.to_string());
        }
        for c in word[trimmed.len()..].chars() {
            out.push(c.to_string());
        }
    }
    out
}

/// Per-symptom mention flags. A symptom counts when its words occur as a
/// contiguous run inside one sentence and the word just before the run is not
/// the negation token.
pub fn extract_mentions(text: &str, ontology: &[String]) -> Vec<bool> {
    let tokens = word_tokens(text);
    let sentences: Vec<&[String]> = tokens.split(|t| t == ".").collect();
    let names: Vec<Vec<&str>> = ontology
        .iter()
        .map(|n| n.split_whitespace().collect())
        .collect();
    names
        .iter()
        .map(|name| {
            !name.is_empty()
                && sentences.iter().any(|s| {
                    s.windows(name.len()).enumerate().any(|(i, w)| {
                        w.iter().zip(name).all(|(a, b)| a == b) && (i == 0 || s[i - 1] != NEGATION)
                    })
                })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Counts over one episode. With nothing predicted and nothing true the
/// episode scores 1 on every ratio.
pub fn symptom_prf(pred: &[bool], truth: &[bool]) -> Prf {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            tp,
            fp,
            fn_,
        };
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf {
        precision,
        recall,
        f1: f1(precision, recall),
        tp,
        fp,
        fn_,
    }
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure between token sequences.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    f1(p, r)
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> f64 {
    rouge_l(&word_tokens(candidate), &word_tokens(reference))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub case_id: u64,
    pub text: String,
    pub truth: Vec<bool>,
    pub predicted: Vec<bool>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
    pub rouge_l: f64,
    /// Generated tokens, eos included.
    pub tokens: usize,
}

impl EpisodeResult {
    pub fn score(
        case_id: u64,
        text: &str,
        reference: &str,
        truth: &[bool],
        ontology: &[String],
        tokens: usize,
    ) -> Self {
        let predicted = extract_mentions(text, ontology);
        let prf = symptom_prf(&predicted, truth);
        Self {
            case_id,
            text: text.to_string(),
            truth: truth.to_vec(),
            predicted,
            tp: prf.tp,
            fp: prf.fp,
            fn_: prf.fn_,
            f1: prf.f1,
            rouge_l: rouge_l_text(text, reference),
            tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub episodes: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False positives per truly absent symptom.
    pub fp_rate: f64,
    /// False negatives per truly present symptom.
    pub fn_rate: f64,
    pub rouge_l: f64,
    pub mean_tokens: f64,
}

/// Micro-averaged report. Float means are summed in sorted order so the
/// result does not depend on episode order.
pub fn aggregate(results: &[EpisodeResult]) -> Result<AggregateReport> {
    if results.is_empty() {
        return Err(Error::NoEpisodes);
    }
    let n = results.len();
    let (mut tp, mut fp, mut fn_, mut present, mut absent, mut tokens) = (0, 0, 0, 0, 0, 0);
    for r in results {
        tp += r.tp;
        fp += r.fp;
        fn_ += r.fn_;
        let p = r.truth.iter().filter(|&&t| t).count();
        present += p;
        absent += r.truth.len() - p;
        tokens += r.tokens;
    }
    let mut rouge: Vec<f64> = results.iter().map(|r| r.rouge_l).collect();
    rouge.sort_by(f64::total_cmp);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(AggregateReport {
        episodes: n,
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1: f1(precision, recall),
        fp_rate: ratio(fp, absent),
        fn_rate: ratio(fn_, present),
        rouge_l: rouge.iter().sum::<f64>() / n as f64,
        mean_tokens: tokens as f64 / n as f64,
    })
}

//! Test-only helpers: a scripted model backend and a straight-line
//! recomputation of the fused step that shares no code with the engine.

#![allow(dead_code)]

use std::sync::Mutex;

use ccd::backends::{Branch, ModelBackend, StepQuery, Vocab};
use ccd::engine::Ablation;
use ccd::expert::{Gamma, TokenMap};
use ccd::{LogitVector, ProcessorConfig, Result, TokenId};

/// Serves a fixed row per (step, branch) and records every context it sees.
pub struct TableBackend {
    pub vocab: Vocab,
    pub rows: Vec<[Vec<f64>; 2]>,
    pub seen: Mutex<Vec<(usize, Branch, Vec<TokenId>)>>,
}

impl TableBackend {
    pub fn new(vocab_size: usize, rows: Vec<[Vec<f64>; 2]>) -> Self {
        let tokens = (0..vocab_size).map(|i| format!("t{i}")).collect();
        Self {
            vocab: Vocab::new(tokens, 0),
            rows,
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl ModelBackend for TableBackend {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_logits(&self, q: &StepQuery<'_>) -> Result<LogitVector> {
        self.seen
            .lock()
            .unwrap()
            .push((q.step, q.branch, q.context.to_vec()));
        let row = &self.rows[q.step][match q.branch {
            Branch::Original => 0,
            Branch::Anchored => 1,
        }];
        LogitVector::new(row.clone())
    }

    fn encode_anchor(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(vec![text.len() as TokenId % self.vocab.len() as TokenId])
    }
}

/// Everything the oracle needs for one step.
pub struct OracleInput<'a> {
    pub z_o: &'a [f64],
    pub z_c: &'a [f64],
    pub labels: &'a [(String, f64)],
    pub token_map: &'a TokenMap,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: Gamma,
    pub tau: f64,
    pub selected_only: bool,
    pub ablation: Ablation,
    pub processors: &'a ProcessorConfig,
    pub history: &'a [TokenId],
}

fn oracle_log_softmax(z: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = z.iter().copied().filter(|v| v.is_finite()).collect();
    let m = finite.iter().copied().fold(f64::MIN, f64::max);
    let s: f64 = finite.iter().map(|v| (v - m).exp()).sum();
    z.iter()
        .map(|&v| {
            if v.is_finite() {
                v - m - s.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

fn mix(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let left = if w == 1.0 { 0.0 } else { (1.0 - w) * x };
            let right = if w == 0.0 { 0.0 } else { w * y };
            left + right
        })
        .collect()
}

fn oracle_processors(z: &[f64], history: &[TokenId], cfg: &ProcessorConfig) -> Vec<f64> {
    let mut z = z.to_vec();
    let mut hist: Vec<usize> = history.iter().map(|&t| t as usize).collect();
    hist.sort_unstable();
    hist.dedup();
    for t in hist {
        if t < z.len() && z[t].is_finite() {
            z[t] = if z[t] > 0.0 {
                z[t] / cfg.repetition_penalty
            } else {
                z[t] * cfg.repetition_penalty
            };
        }
    }
    if history.len() < cfg.min_length {
        z[cfg.eos_token_id as usize] = f64::NEG_INFINITY;
    }
    for v in z.iter_mut() {
        *v /= cfg.temperature;
    }
    let mut order: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_finite()).collect();
    order.sort_by(|&a, &b| z[b].partial_cmp(&z[a]).unwrap().then(a.cmp(&b)));
    if cfg.top_k > 0 && cfg.top_k < order.len() {
        for &i in &order[cfg.top_k..] {
            z[i] = f64::NEG_INFINITY;
        }
        order.truncate(cfg.top_k);
    }
    if cfg.top_p < 1.0 {
        let lp = oracle_log_softmax(&z);
        let mut acc = 0.0;
        let mut keep = order.len();
        for (r, &i) in order.iter().enumerate() {
            acc += lp[i].exp();
            if acc >= cfg.top_p - 1e-12 {
                keep = r + 1;
                break;
            }
        }
        for &i in &order[keep..] {
            z[i] = f64::NEG_INFINITY;
        }
    }
    z
}

/// `z_ccd` composed directly from raw inputs.
pub fn oracle_ccd(inp: &OracleInput<'_>) -> Vec<f64> {
    let (alpha, beta, use_bias) = match inp.ablation {
        Ablation::Full => (inp.alpha, inp.beta, true),
        Ablation::ScdOnly => (inp.alpha, inp.beta, false),
        Ablation::EcdOnly => (0.0, inp.beta, true),
        Ablation::Off => (0.0, 0.0, false),
    };
    let scd = mix(
        &oracle_log_softmax(inp.z_o),
        &oracle_log_softmax(inp.z_c),
        alpha,
    );

    let mut bias = vec![0.0; scd.len()];
    if use_bias {
        let cap = match inp.gamma {
            Gamma::Ratio(g) => g.ln(),
            Gamma::Disabled => f64::INFINITY,
        };
        for (name, p) in inp.labels {
            if inp.selected_only && *p <= inp.tau {
                continue;
            }
            let s = p.clamp(1e-6, 1.0 - 1e-6);
            let b = (s / (1.0 - s)).ln().clamp(-cap, cap);
            for &id in inp.token_map.get(name).unwrap() {
                bias[id as usize] += b;
            }
        }
    }
    let ecd: Vec<f64> = scd.iter().zip(&bias).map(|(a, b)| a + b).collect();
    let processed = oracle_processors(&scd, inp.history, inp.processors);
    mix(&processed, &ecd, beta)
}

/// Max abs difference; a ban on one side only counts as infinite error.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x.is_finite(), y.is_finite()) {
            (true, true) => (x - y).abs(),
            (false, false) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// A random fused-decoding problem small enough to check exhaustively.
pub struct Instance {
    pub vocab_size: usize,
    pub rows: Vec<[Vec<f64>; 2]>,
    pub labels: Vec<(String, f64)>,
    pub token_map: TokenMap,
    pub cfg: ccd::DecodeConfig,
}

fn pick_weight(rng: &mut ccd::DecodeRng) -> f64 {
    match rng.below(4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.uniform(),
    }
}

fn random_row(rng: &mut ccd::DecodeRng, v: usize) -> Vec<f64> {
    (0..v)
        .map(|i| {
            if i != 1 && rng.bernoulli(0.15) {
                f64::NEG_INFINITY
            } else {
                10.0 * rng.uniform() - 5.0
            }
        })
        .collect()
}

pub fn random_instance(rng: &mut ccd::DecodeRng) -> Instance {
    use ccd::engine::{Ablation, DecodeMode};
    use ccd::expert::BiasScope;

    let v = 2 + rng.below(11);
    let horizon = 1 + rng.below(4);
    let rows = (0..horizon)
        .map(|_| [random_row(rng, v), random_row(rng, v)])
        .collect();

    let mut labels = Vec::new();
    let mut token_map = TokenMap::new();
    for i in 0..rng.below(5) {
        let name = format!("L{i}");
        let p = match rng.below(6) {
            0 => 0.0,
            1 => 1.0,
            2 => 0.5,
            _ => rng.uniform(),
        };
        let ids = (0..1 + rng.below(2))
            .map(|_| rng.below(v) as TokenId)
            .collect();
        token_map.insert(name.clone(), ids);
        labels.push((name, p));
    }

    let gamma = match rng.below(5) {
        0 => Gamma::Ratio(2.0),
        1 => Gamma::Ratio(5.0),
        2 => Gamma::Ratio(10.0),
        3 => Gamma::Disabled,
        _ => Gamma::Ratio(1.1 + 20.0 * rng.uniform()),
    };
    let processors = if rng.bernoulli(0.4) {
        ProcessorConfig::default()
    } else {
        ProcessorConfig {
            temperature: 0.5 + 1.5 * rng.uniform(),
            top_k: rng.below(v + 1),
            top_p: if rng.bernoulli(0.5) {
                1.0
            } else {
                0.3 + 0.7 * rng.uniform()
            },
            repetition_penalty: 1.0 + rng.uniform(),
            min_length: rng.below(4),
            eos_token_id: 0,
        }
    };
    let cfg = ccd::DecodeConfig {
        alpha: pick_weight(rng),
        beta: pick_weight(rng),
        gamma,
        tau: rng.uniform(),
        bias_scope: if rng.bernoulli(0.5) {
            BiasScope::All
        } else {
            BiasScope::Selected
        },
        mode: if rng.bernoulli(0.5) {
            DecodeMode::Greedy
        } else {
            DecodeMode::Sample
        },
        seed: rng.next_u64(),
        max_tokens: horizon,
        processors,
        ablation: Ablation::ALL[rng.below(4)],
        ..Default::default()
    };
    Instance {
        vocab_size: v,
        rows,
        labels,
        token_map,
        cfg,
    }
}

impl Instance {
    pub fn label_set(&self) -> ccd::ClinicalLabelSet {
        ccd::ClinicalLabelSet::from_pairs(self.labels.iter().map(|(n, p)| (n.as_str(), *p)))
            .unwrap()
    }

    /// Runs the engine with tracing and returns the worst oracle deviation
    /// over all produced steps.
    pub fn oracle_error(&self) -> f64 {
        let backend = TableBackend::new(self.vocab_size, self.rows.clone());
        let engine = ccd::CcdEngine::new(self.cfg.clone(), self.token_map.clone())
            .unwrap()
            .with_tracing(true);
        let gen = engine.generate(&backend, &self.label_set(), &[]).unwrap();
        gen.steps
            .iter()
            .map(|rec| {
                let t = rec.step;
                let expect = oracle_ccd(&OracleInput {
                    z_o: &self.rows[t][0],
                    z_c: &self.rows[t][1],
                    labels: &self.labels,
                    token_map: &self.token_map,
                    alpha: self.cfg.alpha,
                    beta: self.cfg.beta,
                    gamma: self.cfg.gamma,
                    tau: self.cfg.tau,
                    selected_only: self.cfg.bias_scope == ccd::BiasScope::Selected,
                    ablation: self.cfg.ablation,
                    processors: &self.cfg.processors,
                    history: &gen.tokens[..t],
                });
                max_abs_diff(&expect, rec.ccd.as_slice())
            })
            .fold(0.0, f64::max)
    }
}

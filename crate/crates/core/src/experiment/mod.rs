//! Seeded experiment runs, sweeps and the random-expert comparison.

mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{ExpertBackend, FixedExpert, LogitsTrace, NoisyExpert, RandomExpert};
use crate::engine::{CcdEngine, Generation};
use crate::error::{Error, Result};
use crate::expert::{ClinicalLabelSet, Gamma};
use crate::metrics::{aggregate, AggregateReport, EpisodeResult};
use crate::rng::{stream, DecodeRng};
use crate::world::World;

pub use config::{BackendKind, ExperimentConfig, ExpertKind};

/// One summary line. Column order is fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub seed: u64,
    pub episodes: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: String,
    pub tau: f64,
    pub ablation: String,
    pub expert: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub rouge_l: f64,
    pub mean_tokens: f64,
}

impl CsvRow {
    pub fn new(cfg: &ExperimentConfig, report: &AggregateReport) -> Self {
        Self {
            seed: cfg.seed,
            episodes: report.episodes,
            alpha: cfg.alpha,
            beta: cfg.beta,
            gamma: cfg.gamma.to_string(),
            tau: cfg.tau,
            ablation: cfg.ablation.to_string(),
            expert: cfg.expert.to_string(),
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            fp_rate: report.fp_rate,
            fn_rate: report.fn_rate,
            rouge_l: report.rouge_l,
            mean_tokens: report.mean_tokens,
        }
    }
}

pub fn write_csv(rows: &[CsvRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[CsvRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub report: AggregateReport,
    pub row: CsvRow,
    #[serde(skip)]
    pub episodes: Vec<EpisodeResult>,
}

fn build_expert(cfg: &ExperimentConfig, world: &World) -> Result<Box<dyn ExpertBackend>> {
    let ontology = world.ontology().to_vec();
    Ok(match cfg.expert {
        ExpertKind::Noisy => Box::new(NoisyExpert {
            ontology,
            noise_sigma: cfg.noise_sigma,
            flip_rate: cfg.flip_rate,
        }),
        ExpertKind::Random => Box::new(RandomExpert { ontology }),
        ExpertKind::ReplayFile => {
            let path = cfg.labels_path.as_ref().ok_or_else(|| {
                Error::InvalidConfig("replay-file expert needs labels_path".into())
            })?;
            Box::new(FixedExpert {
                labels: ClinicalLabelSet::read_jsonl(BufReader::new(File::open(path)?))?,
            })
        }
    })
}

/// Everything needed to run episodes of one configuration.
pub struct Session {
    cfg: ExperimentConfig,
    world: World,
    expert: Box<dyn ExpertBackend>,
    engine: CcdEngine,
}

/// A finished episode before scoring.
pub struct EpisodeRun {
    pub seed: u64,
    pub labels: ClinicalLabelSet,
    pub generation: Generation,
    pub result: EpisodeResult,
}

impl Session {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let world = World::new(cfg.world_params())?;
        let expert = build_expert(cfg, &world)?;
        let eos = world.vocab().vocab().eos();
        let engine = CcdEngine::new(cfg.decode_config(eos), world.vocab().token_map())?;
        Ok(Self {
            cfg: cfg.clone(),
            world,
            expert,
            engine,
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn engine(&self) -> &CcdEngine {
        &self.engine
    }

    pub fn episode_seed(&self, index: usize) -> u64 {
        self.cfg.seed.wrapping_add(index as u64)
    }

    /// Runs episode `index`: case, expert labels, generation, scores.
    pub fn run_episode(&self, index: usize, tracing: bool) -> Result<EpisodeRun> {
        let seed = self.episode_seed(index);
        let case = self.world.case(seed);
        let labels = self
            .expert
            .predict(&case, &mut DecodeRng::with_stream(seed, stream::EXPERT))?;
        let model = self.world.model().bind(&case);
        let engine = self.engine.clone().with_tracing(tracing);
        let generation = engine.generate_seeded(&model, &labels, &case.prompt, seed)?;
        let result = EpisodeResult::score(
            case.id,
            &generation.text,
            &self.world.reference_report(&case),
            &case.truth,
            self.world.ontology(),
            generation.tokens.len(),
        );
        Ok(EpisodeRun {
            seed,
            labels,
            generation,
            result,
        })
    }

    /// Trace of one episode, with the expert labels in the header.
    pub fn capture_trace(&self, index: usize) -> Result<LogitsTrace> {
        let run = self.run_episode(index, true)?;
        LogitsTrace::from_generation(
            self.world.vocab().vocab(),
            self.engine.token_map(),
            Some(&run.labels),
            &run.generation,
        )
    }
}

/// Runs all episodes on the rayon pool; results stay in episode order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    if cfg.backend == BackendKind::Replay {
        return Err(Error::InvalidConfig(
            "the replay backend has no ground truth; use the replay command".into(),
        ));
    }
    let session = Session::new(cfg)?;
    let episodes = (0..cfg.episodes)
        .into_par_iter()
        .map(|i| session.run_episode(i, false).map(|r| r.result))
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(&episodes)?;
    Ok(RunOutput {
        config: cfg.clone(),
        row: CsvRow::new(cfg, &report),
        report,
        episodes,
    })
}

/// Writes `summary.csv`, `report.json` and `episodes.jsonl` into `dir`.
pub fn write_run_outputs(out: &RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("summary.csv"),
        csv_string(std::slice::from_ref(&out.row))?,
    )?;
    let mut report = serde_json::to_string_pretty(out)?;
    report.push('\n');
    fs::write(dir.join("report.json"), report)?;
    let mut lines = String::new();
    for e in &out.episodes {
        lines.push_str(&serde_json::to_string(e)?);
        lines.push('\n');
    }
    fs::write(dir.join("episodes.jsonl"), lines)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Alpha,
    Beta,
    Gamma,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::Gamma => "gamma",
        }
    }

    pub fn default_values(self) -> Vec<SweepValue> {
        match self {
            SweepAxis::Alpha | SweepAxis::Beta => [0.0, 0.25, 0.5, 0.75, 1.0]
                .into_iter()
                .map(SweepValue::Weight)
                .collect(),
            SweepAxis::Gamma => vec![
                SweepValue::Gamma(Gamma::Ratio(2.0)),
                SweepValue::Gamma(Gamma::Ratio(5.0)),
                SweepValue::Gamma(Gamma::Ratio(10.0)),
                SweepValue::Gamma(Gamma::Disabled),
            ],
        }
    }

    pub fn parse_value(self, s: &str) -> Result<SweepValue> {
        match self {
            SweepAxis::Gamma => Ok(SweepValue::Gamma(s.parse()?)),
            _ => {
                let v: f64 = s.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("bad {} value `{s}`", self.as_str()))
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidConfig(format!(
                        "{} must be in [0, 1], got {v}",
                        self.as_str()
                    )));
                }
                Ok(SweepValue::Weight(v))
            }
        }
    }

    pub fn parse_values(self, list: &str) -> Result<Vec<SweepValue>> {
        list.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| self.parse_value(s))
            .collect()
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "beta" => Ok(SweepAxis::Beta),
            "gamma" => Ok(SweepAxis::Gamma),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepValue {
    Weight(f64),
    Gamma(Gamma),
}

impl SweepValue {
    fn sort_key(self) -> f64 {
        match self {
            SweepValue::Weight(w) => w,
            SweepValue::Gamma(g) => g.sort_key(),
        }
    }
}

/// One row per distinct grid value, sorted ascending (`off` last).
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[SweepValue],
) -> Result<Vec<CsvRow>> {
    let mut values = values.to_vec();
    values.sort_by(|a, b| a.sort_key().total_cmp(&b.sort_key()));
    values.dedup_by(|a, b| a.sort_key() == b.sort_key());
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match (axis, v) {
                (SweepAxis::Alpha, SweepValue::Weight(w)) => cfg.alpha = w,
                (SweepAxis::Beta, SweepValue::Weight(w)) => cfg.beta = w,
                (SweepAxis::Gamma, SweepValue::Gamma(g)) => cfg.gamma = g,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "value {v:?} does not fit axis {axis}"
                    )))
                }
            }
            run_experiment(&cfg).map(|o| o.row)
        })
        .collect()
}

/// Same world seeds, noisy expert then random expert.
pub fn run_random_prior_test(base: &ExperimentConfig) -> Result<[RunOutput; 2]> {
    let noisy = ExperimentConfig {
        expert: ExpertKind::Noisy,
        ..base.clone()
    };
    let random = ExperimentConfig {
        expert: ExpertKind::Random,
        ..base.clone()
    };
    Ok([run_experiment(&noisy)?, run_experiment(&random)?])
}

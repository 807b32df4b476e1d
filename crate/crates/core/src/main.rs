use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ccd::backends::{LogitsTrace, ReplayBackend};
use ccd::engine::{Ablation, CcdEngine};
use ccd::experiment::{
    csv_string, run_experiment, run_random_prior_test, run_sweep, write_run_outputs, BackendKind,
    ExperimentConfig, ExpertKind, Session, SweepAxis,
};
use ccd::expert::{ClinicalLabelSet, Gamma};
use ccd::world::write_cases_jsonl;

#[derive(Parser)]
#[command(
    name = "ccd",
    version,
    about = "Expert-guided dual-branch decoding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and print its summary row.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the dual-branch logits trace of episode 0 here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Vary one hyperparameter with everything else fixed.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated grid; defaults to the standard grid for the axis.
        #[arg(long)]
        values: Option<String>,
    },
    /// Noisy expert versus random expert on the same cases.
    RandomPrior {
        #[command(flatten)]
        common: Common,
    },
    /// Decode from a recorded logits trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Expert labels (JSONL); defaults to the labels stored in the trace.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write per-stage step records here.
        #[arg(long)]
        step_trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the sampled cases of a configuration as JSONL.
    Cases {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Likelihood-ratio cap, or `off`.
    #[arg(long)]
    gamma: Option<Gamma>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    expert: Option<ExpertKind>,
    /// full, scd-only, ecd-only or off.
    #[arg(long)]
    ablation: Option<Ablation>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.episodes {
            cfg.episodes = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.expert {
            cfg.expert = v;
        }
        if let Some(v) = self.ablation {
            cfg.ablation = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { common, trace } => {
            let cfg = common.resolve()?;
            if cfg.backend == BackendKind::Replay {
                let path = cfg.trace_path.clone().expect("validated");
                return replay(&path, &cfg, None, None, cfg.out_dir.as_deref());
            }
            let out = run_experiment(&cfg)?;
            if let Some(path) = trace {
                Session::new(&cfg)?.capture_trace(0)?.write(&path)?;
            }
            if let Some(dir) = &cfg.out_dir {
                write_run_outputs(&out, dir)?;
            }
            print!("{}", csv_string(&[out.row])?);
        }
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let cfg = common.resolve()?;
            let values = match values {
                Some(list) => axis.parse_values(&list)?,
                None => axis.default_values(),
            };
            if values.is_empty() {
                bail!("empty sweep grid");
            }
            let text = csv_string(&run_sweep(&cfg, axis, &values)?)?;
            if let Some(dir) = &cfg.out_dir {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(format!("sweep_{axis}.csv")), &text)?;
            }
            print!("{text}");
        }
        Command::RandomPrior { common } => {
            let cfg = common.resolve()?;
            let runs = run_random_prior_test(&cfg)?;
            let text = csv_string(&[runs[0].row.clone(), runs[1].row.clone()])?;
            if let Some(dir) = &cfg.out_dir {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("random_prior.csv"), &text)?;
            }
            print!("{text}");
        }
        Command::Replay {
            trace,
            config,
            labels,
            step_trace,
            out,
        } => {
            let cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            replay(
                &trace,
                &cfg,
                labels.as_deref(),
                step_trace.as_deref(),
                out.as_deref(),
            )?;
        }
        Command::Cases { common } => {
            let cfg = common.resolve()?;
            let session = Session::new(&cfg)?;
            let cases: Vec<_> = (0..cfg.episodes)
                .map(|i| session.world().case(session.episode_seed(i)))
                .collect();
            let stdout = io::stdout();
            write_cases_jsonl(&cases, BufWriter::new(stdout.lock()))?;
        }
    }
    Ok(())
}

fn replay(
    trace_path: &Path,
    cfg: &ExperimentConfig,
    labels_path: Option<&Path>,
    step_trace: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let trace = LogitsTrace::read(trace_path)
        .with_context(|| format!("reading {}", trace_path.display()))?;
    let labels = match labels_path {
        Some(p) => ClinicalLabelSet::read_jsonl(BufReader::new(File::open(p)?))?,
        None => trace.header.labels.clone().unwrap_or_default(),
    };
    let token_map = trace.header.token_map.clone();
    let decode = cfg.decode_config(trace.header.eos);
    let engine = CcdEngine::new(decode, token_map)?.with_tracing(true);
    let backend = ReplayBackend::new(trace);
    let generation = engine.generate(&backend, &labels, &[])?;

    if let Some(p) = step_trace {
        let mut w = BufWriter::new(File::create(p)?);
        generation.write_step_trace(&mut w)?;
        w.flush()?;
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("generation.json"),
            serde_json::to_string(&generation)?,
        )?;
    }
    let summary = serde_json::json!({
        "tokens": generation.tokens,
        "text": generation.text,
        "anchor": generation.anchor,
    });
    println!("{summary}");
    Ok(())
}

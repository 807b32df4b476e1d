//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use ccd::backends::{LogitsTrace, ReplayBackend};
use ccd::engine::{plain_decode, Ablation};
use ccd::experiment::{
    csv_string, run_experiment, run_random_prior_test, run_sweep, ExperimentConfig, ExpertKind,
    Session, SweepAxis, SweepValue,
};
use ccd::expert::{clip_bias, label_bias};
use ccd::processors::{
    apply_repetition_penalty, apply_temperature, apply_top_k, apply_top_p, enforce_min_length,
    run_stack,
};
use ccd::world::Prevalence;
use ccd::{CcdEngine, DecodeMode, DecodeRng, Gamma, LogitVector, ProcessorConfig};

const NEG: f64 = f64::NEG_INFINITY;

/// Tolerance for frozen metric goldens.
const GOLDEN_TOL: f64 = 1e-12;

// Standard world, seed 0, 200 episodes, noiseless expert, defaults.
const GOLDEN_OFF_F1: f64 = 0.4718045112781955;
const GOLDEN_OFF_RECALL: f64 = 0.31025957972805934;
const GOLDEN_FULL_F1: f64 = 0.9963054187192119;
const GOLDEN_SCD_RECALL: f64 = 0.9777503090234858;
const GOLDEN_ECD_FP_RATE: f64 = 0.0025113008538422904;
const GOLDEN_SCD_FP_RATE: f64 = 0.053741838272225013;
const GOLDEN_RANDOM_F1: f64 = 0.8763913298183948;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(name: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= GOLDEN_TOL {
        Ok(())
    } else {
        Err(format!("{name} = {got:?}, golden {want:?}"))
    }
}

fn timed(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    }
}

fn reduction() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        alpha: 0.0,
        beta: 0.0,
        mode: DecodeMode::Greedy,
        episodes: 100,
        ..Default::default()
    };
    let session = Session::new(&cfg).map_err(|e| e.to_string())?;
    let world = session.world();
    let eos = world.vocab().vocab().eos();
    let processors = cfg.decode_config(eos).processors;
    for i in 0..cfg.episodes {
        let run = session.run_episode(i, false).map_err(|e| e.to_string())?;
        let case = world.case(run.seed);
        let model = world.model().bind(&case);
        let plain = plain_decode(
            &model,
            &case.prompt,
            &processors,
            DecodeMode::Greedy,
            cfg.max_tokens,
            run.seed,
        )
        .map_err(|e| e.to_string())?;
        if plain != run.generation.tokens {
            return Err(format!(
                "episode {i}: {plain:?} vs {:?}",
                run.generation.tokens
            ));
        }
    }
    let took = timed(Duration::from_secs(10), start)?;
    Ok(format!("100 episodes token-identical in {took:.2?}"))
}

fn step_oracle() -> Outcome {
    let mut rng = DecodeRng::new(2024);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        worst = worst.max(common::random_instance(&mut rng).oracle_error());
    }
    check(
        worst <= 1e-9,
        format!("500 instances, max abs error {worst:.3e} (limit 1e-9)"),
    )
}

/// `s >= g / (g + 1)` decided in exact arithmetic: `s * (g + 1) - g` under a
/// single rounding keeps its sign, and `g + 1` is exact for small integers.
fn at_or_above_boundary(s: f64, g: f64) -> bool {
    s.mul_add(g + 1.0, -g) >= 0.0
}

fn clipping_bound() -> Outcome {
    let n = 10_000;
    for g in [2.0f64, 5.0, 10.0] {
        let gamma = Gamma::Ratio(g);
        let cap = g.ln();
        let mut grid: Vec<f64> = (0..n)
            .map(|i| 1e-6 + (1.0 - 2e-6) * i as f64 / (n - 1) as f64)
            .collect();
        // The floats straddling the boundary.
        let near = g / (g + 1.0);
        grid.extend([
            near.next_down().next_down(),
            near.next_down(),
            near,
            near.next_up(),
            near.next_up().next_up(),
        ]);
        let mut hits = 0;
        for s in grid {
            let b = clip_bias(label_bias(s), gamma);
            if b.abs() > cap + 1e-12 {
                return Err(format!("gamma {g}, s {s}: |b| = {}", b.abs()));
            }
            if at_or_above_boundary(s, g) {
                hits += 1;
                if b != cap {
                    return Err(format!("gamma {g}, s {s:?}: b = {b:?}, cap {cap:?}"));
                }
            } else if b >= cap {
                return Err(format!(
                    "gamma {g}, s {s:?} below the boundary reaches the cap"
                ));
            }
        }
        if hits == 0 {
            return Err(format!("gamma {g}: no sample above the boundary"));
        }
    }
    let examples = [
        (clip_bias(4.595, Gamma::Ratio(10.0)), 10f64.ln()),
        (clip_bias(0.0, Gamma::Ratio(2.0)), 0.0),
        (clip_bias(-1.5, Gamma::Ratio(2.0)), -(2f64.ln())),
    ];
    for (got, want) in examples {
        if got != want {
            return Err(format!("clip example {got:?} != {want:?}"));
        }
    }
    Ok("3 gammas x 10^4 probabilities, boundary exact".into())
}

fn lv(v: &[f64]) -> LogitVector {
    LogitVector::new(v.to_vec()).unwrap()
}

fn processors() -> Outcome {
    let mut failures = Vec::new();
    let mut eq = |name: &str, got: LogitVector, want: &[f64]| {
        if got.as_slice() != want {
            failures.push(format!("{name}: {:?} != {want:?}", got.as_slice()));
        }
    };
    let z = lv(&[2.0, -2.0, 1.0]);
    eq(
        "rep",
        apply_repetition_penalty(&z, &[0, 1], 2.0),
        &[1.0, -4.0, 1.0],
    );
    eq(
        "rep identity",
        apply_repetition_penalty(&z, &[0, 1], 1.0),
        z.as_slice(),
    );
    eq(
        "rep zero",
        apply_repetition_penalty(&lv(&[0.0]), &[0], 5.0),
        &[0.0],
    );

    let min3 = ProcessorConfig {
        min_length: 3,
        eos_token_id: 0,
        ..Default::default()
    };
    let z = lv(&[1.0, 2.0]);
    eq("min len 0", enforce_min_length(&z, 0, &min3), &[NEG, 2.0]);
    eq("min len 3", enforce_min_length(&z, 3, &min3), &[1.0, 2.0]);
    eq(
        "min off",
        enforce_min_length(&z, 10, &ProcessorConfig::default()),
        &[1.0, 2.0],
    );

    eq(
        "temperature",
        apply_temperature(&lv(&[2.0, 0.0]), 2.0),
        &[1.0, 0.0],
    );

    eq(
        "top_k 1",
        apply_top_k(&lv(&[0.1, 0.7, 0.2]), 1),
        &[NEG, 0.7, NEG],
    );
    eq(
        "top_k 0",
        apply_top_k(&lv(&[0.1, 0.7, 0.2]), 0),
        &[0.1, 0.7, 0.2],
    );
    eq(
        "top_k tie",
        apply_top_k(&lv(&[3.0, 3.0, 1.0]), 1),
        &[3.0, NEG, NEG],
    );

    let z = lv(&[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]);
    eq("top_p 1", apply_top_p(&z, 1.0).unwrap(), z.as_slice());
    eq(
        "top_p 0.8",
        apply_top_p(&z, 0.8).unwrap(),
        &[0.5f64.ln(), 0.3f64.ln(), NEG],
    );
    eq(
        "top_p tiny",
        apply_top_p(&z, 1e-9).unwrap(),
        &[0.5f64.ln(), NEG, NEG],
    );

    let stack = |cfg: ProcessorConfig, z: &[f64], hist: &[u32]| {
        run_stack(&lv(z), hist, hist.len(), &cfg).unwrap()
    };
    eq(
        "stack temperature",
        stack(
            ProcessorConfig {
                temperature: 2.0,
                ..Default::default()
            },
            &[2.0, 0.0],
            &[],
        ),
        &[1.0, 0.0],
    );
    eq(
        "stack rep + top_k",
        stack(
            ProcessorConfig {
                repetition_penalty: 2.0,
                top_k: 1,
                ..Default::default()
            },
            &[2.0, 1.5],
            &[0],
        ),
        &[NEG, 1.5],
    );

    let mut rng = DecodeRng::new(5);
    for _ in 0..1000 {
        let v = 1 + rng.below(12);
        let z: Vec<f64> = (0..v)
            .map(|i| {
                if i > 0 && rng.bernoulli(0.2) {
                    NEG
                } else {
                    20.0 * rng.uniform() - 10.0
                }
            })
            .collect();
        let hist: Vec<u32> = (0..rng.below(5)).map(|_| rng.below(v) as u32).collect();
        eq(
            "identity stack",
            stack(ProcessorConfig::default(), &z, &hist),
            &z,
        );
    }
    if failures.is_empty() {
        Ok("documented examples exact, identity stack no-op on 1000 vectors".into())
    } else {
        Err(failures.join("; "))
    }
}

fn standard(ablation: Ablation) -> ExperimentConfig {
    ExperimentConfig {
        ablation,
        ..Default::default()
    }
}

fn directional() -> Outcome {
    let start = Instant::now();
    let run = |a| {
        run_experiment(&standard(a))
            .map(|o| o.report)
            .map_err(|e| e.to_string())
    };
    let off = run(Ablation::Off)?;
    let full = run(Ablation::Full)?;
    let scd = run(Ablation::ScdOnly)?;
    let ecd = run(Ablation::EcdOnly)?;
    let took = timed(Duration::from_secs(60), start)?;

    let a = full.f1 - off.f1;
    let b = scd.recall - off.recall;
    let c = scd.fp_rate - ecd.fp_rate;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(format!("margins (a) {a} (b) {b} (c) {c}"));
    }
    within("off f1", off.f1, GOLDEN_OFF_F1)?;
    within("off recall", off.recall, GOLDEN_OFF_RECALL)?;
    within("full f1", full.f1, GOLDEN_FULL_F1)?;
    within("scd_only recall", scd.recall, GOLDEN_SCD_RECALL)?;
    within("scd_only fp_rate", scd.fp_rate, GOLDEN_SCD_FP_RATE)?;
    within("ecd_only fp_rate", ecd.fp_rate, GOLDEN_ECD_FP_RATE)?;
    Ok(format!(
        "(a) F1 {:.4} > {:.4}, (b) recall {:.4} > {:.4}, (c) fp_rate {:.4} < {:.4}; {took:.2?}",
        full.f1, off.f1, scd.recall, off.recall, ecd.fp_rate, scd.fp_rate
    ))
}

fn sweep_shape() -> Outcome {
    let base = ExperimentConfig {
        episodes: 50,
        ..Default::default()
    };
    let mut summary = Vec::new();
    for axis in [SweepAxis::Alpha, SweepAxis::Beta, SweepAxis::Gamma] {
        let values = axis.default_values();
        let first = csv_string(&run_sweep(&base, axis, &values).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let second = csv_string(&run_sweep(&base, axis, &values).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        if first != second {
            return Err(format!("{axis} sweep differs on rerun"));
        }
        let rows: Vec<&str> = first.lines().skip(1).collect();
        let want = match axis {
            SweepAxis::Gamma => 4,
            _ => 5,
        };
        if rows.len() != want || rows.iter().any(|r| r.split(',').count() != 15) {
            return Err(format!("{axis} sweep: {} rows", rows.len()));
        }
        if axis == SweepAxis::Gamma && !values.contains(&SweepValue::Gamma(Gamma::Disabled)) {
            return Err("gamma grid lacks the disabled cap".into());
        }
        summary.push(format!("{axis} {}", rows.len()));
    }
    Ok(format!(
        "rows: {}; reruns byte-identical",
        summary.join(", ")
    ))
}

fn random_prior() -> Outcome {
    let off = run_experiment(&standard(Ablation::Off))
        .map_err(|e| e.to_string())?
        .report;
    let [noisy, random] =
        run_random_prior_test(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    if noisy.config.expert != ExpertKind::Noisy || random.config.expert != ExpertKind::Random {
        return Err("unexpected expert pair".into());
    }
    let gain = noisy.report.f1 - off.f1;
    let degradation = noisy.report.f1 - random.report.f1;
    within("random f1", random.report.f1, GOLDEN_RANDOM_F1)?;
    check(
        degradation < 0.5 * gain,
        format!(
            "degradation {degradation:.4} < 0.5 x gain {:.4}",
            0.5 * gain
        ),
    )
}

fn trace_replay() -> Outcome {
    let cfg = ExperimentConfig {
        seed: 11,
        prevalence: Prevalence::Uniform(1.0),
        max_tokens: 20,
        ..Default::default()
    };
    let err = |e: ccd::Error| e.to_string();
    let session = Session::new(&cfg).map_err(err)?;
    let live = session.run_episode(0, true).map_err(err)?.generation;
    let trace = session.capture_trace(0).map_err(err)?;
    if trace.steps() != 20 {
        return Err(format!("trace has {} steps", trace.steps()));
    }
    let text = trace.to_jsonl();
    let parsed = LogitsTrace::parse(&text).map_err(err)?;
    if parsed != trace || parsed.to_jsonl() != text {
        return Err("trace round trip is not byte-stable".into());
    }
    let labels = parsed.header.labels.clone().unwrap_or_default();
    let engine = CcdEngine::new(
        cfg.decode_config(parsed.header.eos),
        parsed.header.token_map.clone(),
    )
    .map_err(err)?
    .with_tracing(true);
    let replayed = engine
        .generate(&ReplayBackend::new(parsed), &labels, &[])
        .map_err(err)?;
    let again = engine
        .generate(&ReplayBackend::new(trace), &labels, &[])
        .map_err(err)?;
    let json = |g: &ccd::Generation| serde_json::to_string(g).unwrap();
    if json(&replayed) != json(&live) || json(&replayed) != json(&again) {
        return Err("replayed generation differs".into());
    }
    Ok(format!(
        "20 steps, {} tokens, generation byte-identical",
        replayed.tokens.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("reduction identity", reduction),
        ("step oracle", step_oracle),
        ("clipping bound", clipping_bound),
        ("processor bit-exactness", processors),
        ("directional efficacy", directional),
        ("sweep shape", sweep_shape),
        ("random-prior robustness", random_prior),
        ("trace replay", trace_replay),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

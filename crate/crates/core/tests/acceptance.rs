//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any failed. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 4 6`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use metaforge::archive::{read_manifests, reproducible_files};
use metaforge::commands::{cmd_evolve, cmd_replay};
use metaforge::config::{RunConfig, RunMode};
use metaforge::dsl::{parse, EvalError, Grammar, MetaParams, StructureClass};
use metaforge::envs::trajectory::TrajectoryEnvSpec;
use metaforge::grpo::{compute_advantages, surrogate_loss, CategoricalPolicy, Choice, GroupBatch, Mask, PolicyRole, TrainingConfig};
use metaforge::inner::{budget_for, run_inner, run_outcome_baseline, Init, InnerRunSpec, Task, TaskConfig, TerminatedReason};
use metaforge::meta::graph::{graph_fit_rl, graph_fit_sft, match_rate, soft_agreement, GraphExample, GraphMetaParams, GraphOp, SftConfig};
use metaforge::meta::{evolve, outer_step, population_schedule, EvolveMode, EvolveOutput, EvolveSettings, OuterConfig, RolloutScore};
use metaforge::orchestrator::cost_report;
use metaforge::primitives::{trajectory_primitives, TrajectoryOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

// 1 -------------------------------------------------------------------------

fn thirds_exactness() -> Outcome {
    let out = TrajectoryOutput::from_rewards(&[1, 0, 1, 1, 0, 0], true);
    let g = trajectory_primitives::<f64>(&out);
    let thirds = &g.as_slice()[1..];
    ensure(thirds == [0.5, 1.0, 0.0], || format!("got {thirds:?}"))?;
    Ok(format!("(g2, g3, g4) = {thirds:?}"))
}

// 2 -------------------------------------------------------------------------

const GOLDEN: &str = include_str!("data/corpus_golden.tsv");
const GOLDEN_POINTS: [[f64; 4]; 3] = [[1.0; 4], [0.0; 4], [1.0, 0.5, 1.0, 0.0]];

fn outcome_name(r: Result<f64, EvalError>) -> String {
    match r {
        Ok(v) => format!("{v:?}"),
        Err(EvalError::DivByZero) => "div_by_zero".into(),
        Err(EvalError::Overflow) => "overflow".into(),
        Err(EvalError::NonFinite) => "non_finite".into(),
        Err(EvalError::DomainError) => "domain".into(),
        Err(EvalError::MissingPrimitive(k)) => format!("missing_g{k}"),
    }
}

fn corpus_golden() -> Outcome {
    let rows: Vec<Vec<&str>> = GOLDEN
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split('\t').collect())
        .collect();
    ensure(rows.len() == 32, || format!("golden has {} rows", rows.len()))?;
    let (mut full, mut unbalanced) = (0, 0);
    for f in &rows {
        let (kind, text, want_parse) = (f[0], f[1], f[2]);
        let parsed = parse(text);
        ensure(parsed.is_ok() == (want_parse == "ok"), || {
            format!("parse decision differs on {text:?}")
        })?;
        if kind != "full" {
            ensure(parsed.is_err(), || format!("truncated prefix accepted: {text:?}"))?;
            continue;
        }
        if text.matches('(').count() != text.matches(')').count() {
            unbalanced += 1;
            ensure(parsed.is_err(), || format!("unbalanced row accepted: {text:?}"))?;
        }
        full += 1;
        let Ok(e) = parsed else { continue };
        for (p, want) in GOLDEN_POINTS.iter().zip(&f[3..6]) {
            let got = outcome_name(e.evaluate(p));
            let same = match (got.parse::<f64>(), want.parse::<f64>()) {
                (Ok(a), Ok(b)) => (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                _ => got == *want,
            };
            ensure(same, || format!("{text:?} at {p:?}: {got} vs golden {want}"))?;
        }
        ensure(e.classify().as_str() == f[6], || {
            format!("{text:?}: class {} vs golden {}", e.classify(), f[6])
        })?;
    }
    Ok(format!(
        "{full} complete rows match ({unbalanced} unbalanced, rejected); {} truncated prefixes rejected",
        rows.len() - full
    ))
}

// 3 -------------------------------------------------------------------------

fn taxonomy() -> Outcome {
    let examples = [
        ("0.5 * g1 + 0.8 * g2", StructureClass::Stable),
        ("g1 * (g2 + 0.2) * g3", StructureClass::Unstable),
        ("-(g1 + 0.5 * g2)", StructureClass::Invalid),
    ];
    for (text, want) in examples {
        let got = parse(text).map_err(|e| e.to_string())?.classify();
        ensure(got == want, || format!("{text}: {got} vs {want}"))?;
    }
    let meta = MetaParams::uniform(Grammar::default(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts: BTreeMap<StructureClass, usize> = BTreeMap::new();
    for _ in 0..10_000 {
        let d = meta.sample(&mut rng);
        let class = catch_unwind(|| d.expr.classify()).map_err(|_| format!("classifier panicked on {}", d.text))?;
        let reparsed = parse(&d.text).map_err(|e| format!("{}: {e}", d.text))?;
        ensure(reparsed.classify() == class, || format!("class changed after reprint: {}", d.text))?;
        *counts.entry(class).or_default() += 1;
    }
    Ok(format!("examples classify as expected; 10000 samples -> {counts:?}"))
}

// 4 -------------------------------------------------------------------------

fn random_instance(rng: &mut ChaCha8Rng, widths: &[usize], masks: &[Mask]) -> (Vec<GroupBatch<f64>>, [CategoricalPolicy<f64>; 3]) {
    let n: usize = widths.iter().sum();
    let mut logits = |scale: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
    let current = logits(1.0);
    let old: Vec<f64> = current.iter().zip(logits(0.4)).map(|(c, d)| c + d).collect();
    let reference = logits(1.0);
    let policy = |l: Vec<f64>| CategoricalPolicy::with_logits(widths.to_vec(), l, PolicyRole::Inner);
    let (current, old, reference) = (policy(current), policy(old), policy(reference));
    let batches = (0..2)
        .map(|context| {
            let outputs: Vec<Vec<Choice>> = (0..2)
                .map(|_| {
                    (0..3)
                        .map(|_| {
                            let row = rng.gen_range(0..widths.len());
                            let allowed: Vec<usize> = (0..widths[row]).filter(|&j| masks[row].allows(j)).collect();
                            Choice::masked(row, allowed[rng.gen_range(0..allowed.len())], masks[row])
                        })
                        .collect()
                })
                .collect();
            let rewards = vec![rng.gen::<f64>(), rng.gen::<f64>()];
            GroupBatch::new(context, outputs, rewards).expect("two finite rewards")
        })
        .collect();
    (batches, [current, old, reference])
}

fn near_clip_kink(batches: &[GroupBatch<f64>], current: &CategoricalPolicy<f64>, old: &CategoricalPolicy<f64>, eps: f64) -> bool {
    batches.iter().flat_map(|b| b.outputs.iter().flatten()).any(|c| {
        let ratio = (current.log_prob(c) - old.log_prob(c)).exp();
        (ratio - (1.0 - eps)).abs() < 1e-3 || (ratio - (1.0 + eps)).abs() < 1e-3
    })
}

fn grpo_unit() -> Outcome {
    let adv = compute_advantages(&[0.0, 1.0]).map_err(|e| e.to_string())?;
    ensure(adv == [-1.0, 1.0], || format!("advantages of [0, 1] = {adv:?}"))?;
    let flat = compute_advantages(&[0.3; 5]).map_err(|e| e.to_string())?;
    ensure(flat.iter().all(|&a| a == 0.0), || format!("constant group gave {flat:?}"))?;

    let cfg = TrainingConfig {
        clip_epsilon: 0.2,
        kl_coeff: 0.05,
        ..TrainingConfig::default()
    };
    let meta_mask = Mask::only(&[0, 1, 3]);
    let families: [(&str, Vec<usize>, Vec<Mask>); 3] = [
        ("trajectory", vec![4, 3, 3], vec![Mask::ALL; 3]),
        ("math", vec![5, 5], vec![Mask::ALL; 2]),
        ("grammar", vec![4, 2, 4], vec![meta_mask, Mask::ALL, meta_mask]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for (name, widths, masks) in &families {
        let mut checked = 0;
        while checked < 20 {
            let (batches, [current, old, reference]) = random_instance(&mut rng, widths, masks);
            if near_clip_kink(&batches, &current, &old, cfg.clip_epsilon) {
                continue;
            }
            let out = surrogate_loss(&batches, &current, &old, &reference, &cfg).map_err(|e| e.to_string())?;
            let h = 1e-6;
            let fd: Vec<f64> = (0..current.num_params())
                .map(|i| {
                    let at = |delta: f64| {
                        let mut p = current.clone();
                        p.params_mut()[i] += delta;
                        surrogate_loss(&batches, &p, &old, &reference, &cfg).unwrap().loss
                    };
                    (at(h) - at(-h)) / (2.0 * h)
                })
                .collect();
            let diff = out.grad.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = fd.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
            let rel = diff / scale;
            worst = worst.max(rel);
            ensure(rel < 1e-4, || format!("{name} instance {checked}: relative error {rel:e}"))?;
            checked += 1;
        }
    }
    Ok(format!(
        "advantages ok; 60 instances (20 per family), worst relative error {worst:.1e}"
    ))
}

// 5 -------------------------------------------------------------------------

fn outcome_reduction() -> Outcome {
    let task_cfg = TaskConfig::default();
    let task = Task::build(&task_cfg).map_err(|e| e.to_string())?;
    for seed in [0u64, 1, 2] {
        let spec = InnerRunSpec {
            expr: "g1".into(),
            init: Init::Scratch,
            budget_steps: budget_for(30),
            task: task_cfg.clone(),
            training: TrainingConfig {
                epochs: 30,
                seed,
                ..TrainingConfig::default()
            },
        };
        let a = run_inner(&spec, &task);
        let b = run_outcome_baseline(&spec, &task);
        let same_params = match (&a.trained_params, &b.trained_params) {
            (Some(x), Some(y)) => x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()) && x.len() == y.len(),
            _ => false,
        };
        ensure(same_params, || format!("seed {seed}: trained parameters differ"))?;
        let ja = serde_json::to_string(&a).expect("serializes");
        let jb = serde_json::to_string(&b).expect("serializes");
        ensure(ja == jb, || format!("seed {seed}: results differ"))?;
    }
    Ok("3 seeds bit-identical (parameters, logs, v)".into())
}

// 6 -------------------------------------------------------------------------

const ANALYTIC_V: [f64; 4] = [0.9, 0.4, 0.1, 0.0];

fn analytic_v(text: &str) -> f64 {
    match text {
        "g1" => ANALYTIC_V[0],
        "g2" => ANALYTIC_V[1],
        "g3" => ANALYTIC_V[2],
        _ => ANALYTIC_V[3],
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Expected v under a depth-one grammar: a primitive (3 logits) or the
/// single constant, chosen by the two live kind logits.
fn expected_v(kind: &[f64; 2], prim: &[f64; 3]) -> f64 {
    let pk = softmax(kind);
    let pp = softmax(prim);
    pk[0] * pp.iter().zip(&ANALYTIC_V[..3]).map(|(p, v)| p * v).sum::<f64>() + pk[1] * ANALYTIC_V[3]
}

fn meta_gradient() -> Outcome {
    let grammar = Grammar {
        max_depth: 1,
        num_primitives: 3,
        constants: vec![0.5],
        ..Grammar::default()
    };
    let mut meta = MetaParams::uniform(grammar, 0.1);
    let kind = [0.3, -0.2];
    let prim = [0.5, 0.0, -0.4];
    meta.kind_logits_mut(0)[..2].copy_from_slice(&kind);
    meta.primitive_logits_mut(0).copy_from_slice(&prim);

    let h = 1e-5;
    let mut fd = Vec::new();
    for i in 0..5 {
        let (mut kp, mut pp, mut km, mut pm) = (kind, prim, kind, prim);
        if i < 2 {
            kp[i] += h;
            km[i] -= h;
        } else {
            pp[i - 2] += h;
            pm[i - 2] -= h;
        }
        fd.push((expected_v(&kp, &pp) - expected_v(&km, &pm)) / (2.0 * h));
    }

    let samples = 200_000;
    let cfg = OuterConfig {
        rollouts: samples,
        kl_coeff: 0.0,
        ..OuterConfig::default()
    };
    let reference = meta.logits.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (next, _, _) = outer_step(&meta, &reference, 0, &cfg, &mut rng, |ds| {
        ds.iter()
            .map(|d| RolloutScore {
                v: analytic_v(&d.text),
                test_v: 0.0,
                valid: true,
                steps_used: 0,
            })
            .collect()
    });
    let (mut before, mut after) = (meta.clone(), next);
    let mut delta: Vec<f64> = after.kind_logits_mut(0)[..2]
        .iter()
        .zip(&before.kind_logits_mut(0)[..2])
        .map(|(a, b)| a - b)
        .collect();
    delta.extend(
        after
            .primitive_logits_mut(0)
            .iter()
            .zip(before.primitive_logits_mut(0).iter())
            .map(|(a, b)| a - b),
    );
    let abs_sum = |x: &[f64]| x.iter().map(|v| v.abs()).sum::<f64>();
    let dead = abs_sum(&after.kind_logits_mut(0)[2..]) + abs_sum(after.op_logits_mut(0)) + abs_sum(after.constant_logits_mut(0));
    ensure(dead == 0.0, || format!("unreachable logits moved by {dead}"))?;

    let unit = |v: &[f64]| -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    };
    let (u, w) = (unit(&delta), unit(&fd));
    let rel = u.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    ensure(rel < 5e-2, || {
        format!("direction error {rel:.3e}; update {delta:?} vs finite differences {fd:?}")
    })?;
    Ok(format!("{samples} samples, 5 live parameters, direction relative error {rel:.2e}"))
}

// 7 and 8 -----------------------------------------------------------------

const DYNAMICS_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn rigged_task() -> TaskConfig {
    TaskConfig {
        trajectory: TrajectoryEnvSpec {
            spread_targets: true,
            ..TrajectoryEnvSpec::default()
        },
        ..TaskConfig::default()
    }
}

fn dynamics_runs() -> &'static Vec<EvolveOutput> {
    static RUNS: OnceLock<Vec<EvolveOutput>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let task_cfg = rigged_task();
        let task = Task::build(&task_cfg).expect("rigged task builds");
        let grammar = Grammar {
            max_depth: 3,
            ..Grammar::default()
        };
        let outer = OuterConfig {
            rollouts: 8,
            epochs: 12,
            learning_rate: 2.0,
            ..OuterConfig::default()
        };
        DYNAMICS_SEEDS
            .iter()
            .map(|&seed| {
                let settings = EvolveSettings {
                    mode: EvolveMode::Standard,
                    outer: outer.clone(),
                    inner: TrainingConfig {
                        epochs: 80,
                        ..TrainingConfig::default()
                    },
                    task: task_cfg.clone(),
                    master_seed: seed,
                    parallelism: 8,
                };
                evolve(MetaParams::uniform(grammar.clone(), outer.learning_rate), &task, &settings)
            })
            .collect()
    })
}

fn first_last(series: &[f64]) -> (f64, f64) {
    (mean(&series[..3]), mean(&series[series.len() - 3..]))
}

fn optimization_dynamics() -> Outcome {
    let mut lines = Vec::new();
    let mut rising = 0;
    for (seed, run) in DYNAMICS_SEEDS.iter().zip(dynamics_runs()) {
        let v: Vec<f64> = run.records.iter().map(|r| r.mean_v).collect();
        let (first, last) = first_last(&v);
        if last - first >= 0.05 {
            rising += 1;
        }
        lines.push(format!("seed {seed}: {first:.3} -> {last:.3}"));
    }
    ensure(rising >= 4, || format!("only {rising}/5 seeds rose by 0.05 ({})", lines.join(", ")))?;
    Ok(format!("{rising}/5 seeds rose by >= 0.05 ({})", lines.join(", ")))
}

fn structure_evolution() -> Outcome {
    let mut lines = Vec::new();
    let mut rising = 0;
    let mut invalid = 0;
    for (seed, run) in DYNAMICS_SEEDS.iter().zip(dynamics_runs()) {
        let stable: Vec<f64> = run
            .records
            .iter()
            .map(|r| r.class_fractions()[StructureClass::Stable as usize])
            .collect();
        let (first, last) = first_last(&stable);
        if last > first {
            rising += 1;
        }
        lines.push(format!("seed {seed}: {first:.2} -> {last:.2}"));
        for e in run.records.iter().flat_map(|r| &r.entries).filter(|e| !e.valid) {
            invalid += 1;
            ensure(e.v == 0.0 && e.test_v == 0.0, || format!("invalid {:?} logged v = {}", e.expr, e.v))?;
        }
        for m in &run.manifests {
            if m.result.terminated_reason == TerminatedReason::InvalidReward {
                ensure(m.result.v == 0.0 && m.result.steps_used == 0, || {
                    format!("invalid run {:?} charged", m.result.expr)
                })?;
            }
        }
    }
    ensure(rising >= 4, || {
        format!("stable fraction rose in only {rising}/5 seeds ({})", lines.join(", "))
    })?;
    Ok(format!(
        "stable fraction rose in {rising}/5 seeds ({}); {invalid} invalid rollouts all logged v = 0",
        lines.join(", ")
    ))
}

// 9 -------------------------------------------------------------------------

fn population_parity() -> Outcome {
    let std10 = cost_report(EvolveMode::Standard, 8, 10, 100, &[]);
    let pop10 = cost_report(EvolveMode::Population, 8, 10, 100, &[]);
    ensure(pop10.schedule == vec![10; 10], || format!("schedule {:?}", pop10.schedule))?;
    ensure(pop10.parity && std10.parity, || "parity flag false".into())?;
    ensure(pop10.lineage_steps.abs_diff(std10.lineage_steps) <= 1, || {
        format!("lineage {} vs {}", pop10.lineage_steps, std10.lineage_steps)
    })?;
    for total in 1..=150 {
        for gens in 1..=15 {
            let s: usize = population_schedule(total, gens).iter().sum();
            ensure(s.abs_diff(total) <= 1, || format!("{total} over {gens}: {s}"))?;
        }
    }

    let task_cfg = TaskConfig::default();
    let task = Task::build(&task_cfg).map_err(|e| e.to_string())?;
    let (rollouts, gens, per_run) = (4, 3, 10);
    let settings = EvolveSettings {
        mode: EvolveMode::Population,
        outer: OuterConfig {
            rollouts,
            epochs: gens,
            ..OuterConfig::default()
        },
        inner: TrainingConfig {
            epochs: per_run,
            ..TrainingConfig::default()
        },
        task: task_cfg,
        master_seed: 9,
        parallelism: 2,
    };
    let grammar = Grammar {
        max_depth: 3,
        ..Grammar::default()
    };
    let out = evolve(MetaParams::uniform(grammar, 1.0), &task, &settings);
    let cost = cost_report(EvolveMode::Population, rollouts, gens, per_run, &out.manifests);
    ensure(cost.parity, || format!("cost report parity false: {cost:?}"))?;
    for r in 0..rollouts {
        let lineage: usize = out
            .manifests
            .iter()
            .filter(|m| m.rollout_index == r)
            .map(|m| m.spec.training.epochs)
            .sum();
        ensure(lineage.abs_diff(per_run) <= 1, || {
            format!("rollout {r}: {lineage} planned steps vs {per_run}")
        })?;
    }
    ensure(
        cost.consumed_total <= out.manifests.iter().map(|m| m.spec.budget_steps).sum(),
        || "budget overrun".into(),
    )?;
    Ok(format!(
        "10x10 population = {} steps per lineage vs standard {}; live run planned {} steps, consumed {}",
        pop10.lineage_steps, std10.lineage_steps, cost.planned_total, cost.consumed_total
    ))
}

// 10 ------------------------------------------------------------------------

fn graph_optimizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let corpus: Vec<GraphExample<f64>> = (0..200)
        .map(|_| {
            let g = [
                f64::from(u8::from(rng.gen_bool(0.5))),
                f64::from(u8::from(rng.gen_bool(0.5))),
                rng.gen::<f64>(),
                rng.gen::<f64>(),
            ];
            // outcome = Pass(Mul(g1, g2), n2): success needs both flags
            GraphExample {
                g,
                outcome: g[0] * g[1] >= 0.5,
            }
        })
        .collect();
    let init = GraphMetaParams::new(GraphOp::ALL.to_vec()).map_err(|e| e.to_string())?;
    let (sft, mse) = graph_fit_sft(
        &init,
        &corpus,
        &SftConfig {
            steps: 500,
            ..SftConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let agreement = soft_agreement(&sft, &corpus);
    ensure(agreement >= 0.95, || format!("SFT agreement {agreement:.3}"))?;
    let cfg = TrainingConfig {
        epochs: 500,
        seed: 3,
        ..TrainingConfig::default()
    };
    let (rl, log) = graph_fit_rl(&init, &corpus, &cfg).map_err(|e| e.to_string())?;
    ensure(log.len() <= 500, || format!("{} RL steps", log.len()))?;
    let rate = match_rate(&rl, &corpus);
    ensure(rate >= 0.90, || format!("RL match rate {rate:.3}"))?;
    Ok(format!(
        "SFT agreement {agreement:.3} (mse {mse:.1e}), RL match rate {rate:.3} after {} steps",
        log.len()
    ))
}

// 11 ------------------------------------------------------------------------

fn replay_config(mode: RunMode, parallelism: usize) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 21,
        mode,
        parallelism,
        task: rigged_task(),
        ..RunConfig::default()
    };
    cfg.grammar.max_depth = 3;
    cfg.cold_start.enabled = false;
    cfg.outer.rollouts = 8;
    cfg.outer.epochs = 3;
    cfg.inner.epochs = 20;
    cfg
}

fn replay_all(dir: &Path) -> Result<usize, String> {
    let manifests = read_manifests(dir).map_err(|e| e.to_string())?;
    for m in &manifests {
        cmd_replay(dir, m.outer_step, m.rollout_index).map_err(|e| e.to_string())?;
    }
    Ok(manifests.len())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b, c) = (tmp.path().join("p1"), tmp.path().join("p8"), tmp.path().join("pop"));
    cmd_evolve(&replay_config(RunMode::Standard, 1), &a).map_err(|e| e.to_string())?;
    cmd_evolve(&replay_config(RunMode::Standard, 8), &b).map_err(|e| e.to_string())?;
    cmd_evolve(&replay_config(RunMode::Population, 4), &c).map_err(|e| e.to_string())?;

    let fa = reproducible_files(&a).map_err(|e| e.to_string())?;
    let fb = reproducible_files(&b).map_err(|e| e.to_string())?;
    ensure(fa == fb, || "archives list different files".into())?;
    for f in &fa {
        let same = fs::read(a.join(f)).ok() == fs::read(b.join(f)).ok();
        ensure(same, || format!("{} differs between parallelism 1 and 8", f.display()))?;
    }
    let replayed = replay_all(&a)? + replay_all(&c)?;
    Ok(format!(
        "{} files byte-identical across parallelism 1/8; {replayed} rollouts replayed",
        fa.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "thirds-primitive exactness", thirds_exactness),
        (2, "expression corpus golden file", corpus_golden),
        (3, "structure taxonomy", taxonomy),
        (4, "GRPO unit correctness", grpo_unit),
        (5, "outcome-reward reduction", outcome_reduction),
        (6, "meta-gradient finite differences", meta_gradient),
        (7, "optimization dynamics", optimization_dynamics),
        (8, "structure evolution", structure_evolution),
        (9, "population budget parity", population_parity),
        (10, "graph meta-optimizer", graph_optimizer),
        (11, "determinism and replay", determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{outer_step, MetaParams, OuterConfig, OuterStepRecord, RolloutScore};
use crate::grpo::TrainingConfig;
use crate::inner::{budget_for, run_inner, Init, InnerRunResult, InnerRunSpec, Task, TaskConfig};
use crate::orchestrator::dispatch;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolveMode {
    /// Every inner run starts from scratch with the full per-run budget.
    Standard,
    /// Later generations warm-start from the previous generation's best
    /// policy; the per-run budget is split across generations.
    Population,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSettings {
    pub mode: EvolveMode,
    pub outer: OuterConfig,
    /// Inner training settings; `epochs` is the full per-run budget.
    pub inner: TrainingConfig,
    pub task: TaskConfig,
    pub master_seed: u64,
    pub parallelism: usize,
}

/// Inner epochs per generation in population mode: `total` split as evenly
/// as possible over `generations`, earlier generations taking the remainder.
pub fn population_schedule(total: usize, generations: usize) -> Vec<usize> {
    let (base, rem) = (total / generations, total % generations);
    (0..generations).map(|g| base + usize::from(g < rem)).collect()
}

/// Full record of one inner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub outer_step: usize,
    pub rollout_index: usize,
    pub spec_hash: String,
    pub spec: InnerRunSpec,
    pub result: InnerRunResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutTiming {
    pub step: usize,
    pub rollout: usize,
    pub t_inner: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: usize,
    pub t_max_inner: f64,
    pub t_update: f64,
    pub t_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub step: usize,
    pub rollout: usize,
    pub expr: String,
    pub v: f64,
    /// Scores of the expression retrained from scratch with the full budget.
    pub retrained_v: f64,
    pub retrained_test_v: f64,
    pub retrained_steps: usize,
}

#[derive(Debug, Clone)]
pub struct EvolveOutput {
    pub records: Vec<OuterStepRecord>,
    pub manifests: Vec<RunManifest>,
    pub rollout_timings: Vec<RolloutTiming>,
    pub step_timings: Vec<StepTiming>,
    /// Running best valid `v` after each step.
    pub best_v: Vec<f64>,
    pub best: Option<BestRecord>,
    pub meta: MetaParams,
}

/// Runs `settings.outer.epochs` outer steps starting from `meta`, whose
/// logits also anchor the KL penalty, then retrains the best expression.
pub fn evolve(meta: MetaParams, task: &Task, settings: &EvolveSettings) -> EvolveOutput {
    let reference = meta.logits.clone();
    let mut meta = meta;
    let outer = &settings.outer;
    let schedule = match settings.mode {
        EvolveMode::Standard => vec![settings.inner.epochs; outer.epochs],
        EvolveMode::Population => population_schedule(settings.inner.epochs, outer.epochs),
    };
    let mut out = EvolveOutput {
        records: Vec::new(),
        manifests: Vec::new(),
        rollout_timings: Vec::new(),
        step_timings: Vec::new(),
        best_v: Vec::new(),
        best: None,
        meta: meta.clone(),
    };
    let mut warm: Option<Vec<f64>> = None;
    let mut best: Option<(usize, usize, String, f64)> = None;

    for (step, &epochs) in schedule.iter().enumerate() {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::meta_seed(settings.master_seed, step));
        let init = match &warm {
            Some(p) if settings.mode == EvolveMode::Population => Init::WarmStart(p.clone()),
            _ => Init::Scratch,
        };
        let mut specs = Vec::new();
        let mut results: Vec<(InnerRunResult, f64)> = Vec::new();
        let mut scored_at = None;
        let (next, record, _) = outer_step(&meta, &reference, step, outer, &mut rng, |derivations| {
            specs = derivations
                .iter()
                .enumerate()
                .map(|(i, d)| InnerRunSpec {
                    expr: d.text.clone(),
                    init: init.clone(),
                    budget_steps: budget_for(epochs.max(1)),
                    task: settings.task.clone(),
                    training: TrainingConfig {
                        epochs,
                        seed: seed::rollout_seed(settings.master_seed, step, i),
                        ..settings.inner.clone()
                    },
                })
                .collect();
            results = dispatch(&specs, task, settings.parallelism);
            scored_at = Some(Instant::now());
            results.iter().map(|(r, _)| RolloutScore::from(r)).collect()
        });
        let t_update = scored_at.map_or(0.0, |t| t.elapsed().as_secs_f64());
        meta = next;

        if settings.mode == EvolveMode::Population {
            let top = results
                .iter()
                .filter(|(r, _)| r.trained_params.is_some())
                .fold(None::<&InnerRunResult>, |acc, (r, _)| match acc {
                    Some(a) if a.v >= r.v => Some(a),
                    _ => Some(r),
                });
            if let Some(r) = top {
                warm = r.trained_params.clone();
            }
        }
        for (i, (r, _)) in results.iter().enumerate() {
            if r.is_valid() && best.as_ref().is_none_or(|b| r.v > b.3) {
                best = Some((step, i, r.expr.clone(), r.v));
            }
        }
        out.best_v.push(best.as_ref().map_or(0.0, |b| b.3));
        let t_max_inner = results.iter().map(|(_, t)| *t).fold(0.0, f64::max);
        for (i, ((r, t), spec)) in results.into_iter().zip(specs).enumerate() {
            out.rollout_timings.push(RolloutTiming {
                step,
                rollout: i,
                t_inner: t,
            });
            out.manifests.push(RunManifest {
                schema_version: crate::SCHEMA_VERSION,
                master_seed: settings.master_seed,
                outer_step: step,
                rollout_index: i,
                spec_hash: spec.hash(),
                spec,
                result: r,
            });
        }
        out.records.push(record);
        out.step_timings.push(StepTiming {
            step,
            t_max_inner,
            t_update,
            t_total: started.elapsed().as_secs_f64(),
        });
    }

    out.best = best.map(|(step, rollout, expr, v)| {
        let spec = InnerRunSpec {
            expr: expr.clone(),
            init: Init::Scratch,
            budget_steps: budget_for(settings.inner.epochs.max(1)),
            task: settings.task.clone(),
            training: TrainingConfig {
                seed: seed::derive(settings.master_seed, seed::STREAM_BEST, 0, 0),
                ..settings.inner.clone()
            },
        };
        let r = run_inner(&spec, task);
        BestRecord {
            step,
            rollout,
            expr,
            v,
            retrained_v: r.v,
            retrained_test_v: r.test_v,
            retrained_steps: r.steps_used,
        }
    });
    out.meta = meta;
    out
}

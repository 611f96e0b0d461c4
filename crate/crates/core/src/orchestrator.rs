//! Parallel execution of independent inner runs and step accounting.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::inner::{run_inner, InnerRunResult, InnerRunSpec, Task};
use crate::meta::{population_schedule, EvolveMode, RunManifest};

/// Runs every spec on `task` with up to `parallelism` worker threads.
/// Results come back in spec order with each run's wall-clock seconds.
pub fn dispatch(specs: &[InnerRunSpec], task: &Task, parallelism: usize) -> Vec<(InnerRunResult, f64)> {
    dispatch_with(specs, parallelism, |spec| run_inner(spec, task))
}

/// [`dispatch`] with a custom runner. A panicking run is recorded as an
/// invalid reward; the other runs are unaffected.
pub fn dispatch_with<R>(specs: &[InnerRunSpec], parallelism: usize, run: R) -> Vec<(InnerRunResult, f64)>
where
    R: Fn(&InnerRunSpec) -> InnerRunResult + Sync,
{
    let workers = parallelism.max(1).min(specs.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(InnerRunResult, f64)>>> = Mutex::new(vec![None; specs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                let started = Instant::now();
                let result = catch_unwind(AssertUnwindSafe(|| run(spec)))
                    .unwrap_or_else(|_| InnerRunResult::invalid(&spec.expr, "inner run panicked"));
                let elapsed = started.elapsed().as_secs_f64();
                slots.lock().expect("no poisoned slots")[i] = Some((result, elapsed));
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned slots")
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub schema_version: u32,
    pub mode: EvolveMode,
    pub rollouts: usize,
    pub outer_epochs: usize,
    /// Full per-run inner budget of a standard run.
    pub per_run_epochs: usize,
    /// Inner epochs scheduled per outer step.
    pub schedule: Vec<usize>,
    /// Inner steps scheduled over the whole run: `rollouts * sum(schedule)`.
    pub planned_total: usize,
    /// Inner steps actually consumed, summed over the manifests.
    pub consumed_total: usize,
    pub invalid_runs: usize,
    /// Steps one warm-started lineage receives across all generations.
    pub lineage_steps: usize,
    /// Population runs must give each lineage the budget of one standard
    /// run (within one step); always true in standard mode.
    pub parity: bool,
}

/// Step accounting for an evolve run from its settings and manifests.
pub fn cost_report(
    mode: EvolveMode,
    rollouts: usize,
    outer_epochs: usize,
    per_run_epochs: usize,
    manifests: &[RunManifest],
) -> CostSummary {
    let schedule = match mode {
        EvolveMode::Standard => vec![per_run_epochs; outer_epochs],
        EvolveMode::Population if outer_epochs > 0 => population_schedule(per_run_epochs, outer_epochs),
        EvolveMode::Population => Vec::new(),
    };
    let lineage_steps = match mode {
        EvolveMode::Standard => per_run_epochs,
        EvolveMode::Population => schedule.iter().sum(),
    };
    CostSummary {
        schema_version: crate::SCHEMA_VERSION,
        mode,
        rollouts,
        outer_epochs,
        per_run_epochs,
        planned_total: rollouts * schedule.iter().sum::<usize>(),
        schedule,
        consumed_total: manifests.iter().map(|m| m.result.steps_used).sum(),
        invalid_runs: manifests.iter().filter(|m| !m.result.is_valid()).count(),
        lineage_steps,
        parity: lineage_steps.abs_diff(per_run_epochs) <= 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grpo::TrainingConfig;
    use crate::inner::{budget_for, Init, TaskConfig};

    fn specs(exprs: &[&str]) -> Vec<InnerRunSpec> {
        exprs
            .iter()
            .enumerate()
            .map(|(i, e)| InnerRunSpec {
                expr: e.to_string(),
                init: Init::Scratch,
                budget_steps: budget_for(3),
                task: TaskConfig::default(),
                training: TrainingConfig {
                    epochs: 3,
                    seed: i as u64,
                    ..TrainingConfig::default()
                },
            })
            .collect()
    }

    #[test]
    fn empty_specs_give_empty_results() {
        let task = Task::build(&TaskConfig::default()).unwrap();
        assert!(dispatch(&[], &task, 4).is_empty());
    }

    #[test]
    fn malformed_expression_only_affects_its_slot() {
        let task = Task::build(&TaskConfig::default()).unwrap();
        let s = specs(&["g1", "g2", "g1 + (g2", "g3", "g4", "g1 + g2", "g1 * g3", "0.5 * g1"]);
        let out = dispatch(&s, &task, 4);
        assert_eq!(out.len(), 8);
        for (i, (r, _)) in out.iter().enumerate() {
            assert_eq!(r.expr, s[i].expr);
            assert_eq!(r.is_valid(), i != 2);
        }
        assert_eq!((out[2].0.v, out[2].0.steps_used), (0.0, 0));
    }

    #[test]
    fn panics_are_contained() {
        let s = specs(&["g1", "boom", "g2"]);
        let out = dispatch_with(&s, 3, |spec| {
            if spec.expr == "boom" {
                panic!("injected");
            }
            InnerRunResult::invalid(&spec.expr, "stub")
        });
        assert_eq!(out[1].0.detail.as_deref(), Some("inner run panicked"));
        assert_eq!(out[0].0.detail.as_deref(), Some("stub"));
    }

    #[test]
    fn results_independent_of_parallelism() {
        let task = Task::build(&TaskConfig::default()).unwrap();
        let s = specs(&["g1", "g2 + g3", "g1 * g4", "g4"]);
        let a: Vec<_> = dispatch(&s, &task, 1).into_iter().map(|(r, _)| r).collect();
        let b: Vec<_> = dispatch(&s, &task, 8).into_iter().map(|(r, _)| r).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn cost_arithmetic() {
        let std = cost_report(EvolveMode::Standard, 8, 10, 100, &[]);
        assert_eq!(std.planned_total, 8000);
        let pop = cost_report(EvolveMode::Population, 8, 10, 100, &[]);
        assert_eq!(pop.schedule, vec![10; 10]);
        assert_eq!(pop.planned_total, 800);
        assert!(pop.parity);
        assert_eq!(pop.lineage_steps, std.per_run_epochs);
    }
}

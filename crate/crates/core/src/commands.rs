//! Entry points behind the command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::{self, csv_string, write_json, ArchiveError};
use crate::config::{ConfigError, RunConfig, RunMode};
use crate::dsl::{parse_with_primitives, read_corpus, MAX_PRIMITIVES};
use crate::grpo::write_step_log_csv;
use crate::inner::{budget_for, run_inner, Init, InnerRunResult, InnerRunSpec, Task};
use crate::meta::{cold_start, evolve, ColdStartReport, EvolveOutput, EvolveSettings, MetaParams, DEFAULT_EXEMPLARS};
use crate::orchestrator::{cost_report, CostSummary};
use crate::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Other(String),
}

impl CommandError {
    /// Process exit code: 2 for configuration problems, 3 for a failed
    /// reproduction, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Mismatch(_) => 3,
            _ => 1,
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |e| CommandError::Other(format!("{}: {e}", path.display()))
}

/// Initial grammar policy: uniform, then fitted to the exemplar corpus if
/// cold start is enabled.
pub fn initial_meta(cfg: &RunConfig) -> Result<(MetaParams, Option<ColdStartReport>), CommandError> {
    let meta = MetaParams::uniform(cfg.grammar.clone(), cfg.outer.learning_rate);
    if !cfg.cold_start.enabled {
        return Ok((meta, None));
    }
    let text = match &cfg.cold_start.corpus {
        Some(p) => fs::read_to_string(p).map_err(io(p))?,
        None => DEFAULT_EXEMPLARS.to_string(),
    };
    let corpus: Vec<(usize, String)> = read_corpus(&text).into_iter().map(|l| (l.line, l.text)).collect();
    let (meta, report) =
        cold_start(&meta, &corpus, &cfg.cold_start.fit_config()).map_err(|e| ConfigError::Invalid(format!("cold_start.corpus: {e}")))?;
    Ok((meta, Some(report)))
}

pub fn evolve_settings(cfg: &RunConfig) -> Result<EvolveSettings, CommandError> {
    let mode = cfg
        .mode
        .evolve_mode()
        .ok_or_else(|| ConfigError::Invalid("evolve needs mode standard or population".into()))?;
    Ok(EvolveSettings {
        mode,
        outer: cfg.outer.clone(),
        inner: cfg.inner.clone(),
        task: cfg.task.clone(),
        master_seed: cfg.seed,
        parallelism: cfg.parallelism,
    })
}

pub fn build_task(cfg: &RunConfig) -> Result<Task, CommandError> {
    Task::build(&cfg.task).map_err(|e| ConfigError::Invalid(format!("task: {e}")).into())
}

/// Runs the outer loop and writes the archive to `out`.
pub fn cmd_evolve(cfg: &RunConfig, out: &Path) -> Result<(EvolveOutput, CostSummary), CommandError> {
    cfg.validate()?;
    let settings = evolve_settings(cfg)?;
    let task = build_task(cfg)?;
    let (meta, _) = initial_meta(cfg)?;
    let result = evolve(meta, &task, &settings);
    let cost = cost_report(
        settings.mode,
        cfg.outer.rollouts,
        cfg.outer.epochs,
        cfg.inner.epochs,
        &result.manifests,
    );
    archive::write_archive(out, cfg, &result, &cost)?;
    Ok((result, cost))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFile {
    pub schema_version: u32,
    pub spec: InnerRunSpec,
    pub result: InnerRunResult,
}

/// One inner run under a fixed expression with the full budget.
pub fn cmd_baseline(cfg: &RunConfig, expr: &str, out: &Path) -> Result<InnerRunResult, CommandError> {
    let cfg = RunConfig {
        mode: RunMode::Baseline(expr.to_string()),
        ..cfg.clone()
    };
    cfg.validate()?;
    let task = build_task(&cfg)?;
    let spec = InnerRunSpec {
        expr: expr.to_string(),
        init: Init::Scratch,
        budget_steps: budget_for(cfg.inner.epochs.max(1)),
        task: cfg.task.clone(),
        training: crate::grpo::TrainingConfig {
            seed: cfg.seed,
            ..cfg.inner.clone()
        },
    };
    let result = run_inner(&spec, &task);
    fs::create_dir_all(out).map_err(io(out))?;
    let steps = out.join("baseline_steps.csv");
    let file = fs::File::create(&steps).map_err(io(&steps))?;
    write_step_log_csv(&result.log, file).map_err(io(&steps))?;
    write_json(
        &out.join("baseline.json"),
        &BaselineFile {
            schema_version: SCHEMA_VERSION,
            spec,
            result: result.clone(),
        },
    )?;
    Ok(result)
}

pub const CLASSIFY_HEADER: [&str; 4] = ["expr", "parse_status", "class", "error"];

/// Parses and classifies every non-comment line of a corpus.
pub fn cmd_classify(corpus: &str) -> String {
    let rows: Vec<Vec<String>> = read_corpus(corpus)
        .into_iter()
        .map(|l| match parse_with_primitives(&l.text, MAX_PRIMITIVES) {
            Ok(e) => vec![l.text, "ok".into(), e.classify().as_str().into(), String::new()],
            Err(err) => vec![l.text, "rejected".into(), String::new(), err.to_string()],
        })
        .collect();
    csv_string(&CLASSIFY_HEADER, &rows)
}

/// Re-executes one archived inner run and checks it reproduces exactly.
pub fn cmd_replay(dir: &Path, step: usize, rollout: usize) -> Result<InnerRunResult, CommandError> {
    if !dir.is_dir() {
        return Err(ArchiveError::NotFound(dir.to_path_buf()).into());
    }
    let manifest = archive::read_manifest(dir, step, rollout)?;
    let mut problems = Vec::new();
    let hash = manifest.spec.hash();
    if hash != manifest.spec_hash {
        problems.push(format!("spec hash: recorded {} recomputed {hash}", manifest.spec_hash));
    }
    let task = Task::build(&manifest.spec.task).map_err(|e| CommandError::Other(e.to_string()))?;
    let rerun = run_inner(&manifest.spec, &task);
    let a = serde_json::to_value(&manifest.result).expect("result serializes");
    let b = serde_json::to_value(&rerun).expect("result serializes");
    if a != b {
        let (serde_json::Value::Object(a), serde_json::Value::Object(b)) = (&a, &b) else {
            unreachable!("results serialize as objects")
        };
        for (k, va) in a {
            if b.get(k) != Some(va) {
                let show = |v: Option<&serde_json::Value>| {
                    let s = v.map_or("<absent>".to_string(), |v| v.to_string());
                    if s.len() > 120 {
                        format!("{}...", &s[..120])
                    } else {
                        s
                    }
                };
                problems.push(format!("{k}: recorded {} replayed {}", show(Some(va)), show(b.get(k))));
            }
        }
    }
    if problems.is_empty() {
        Ok(rerun)
    } else {
        Err(CommandError::Mismatch(format!(
            "replay of step {step} rollout {rollout} differs:\n  {}",
            problems.join("\n  ")
        )))
    }
}

/// Step accounting recomputed from an archive.
pub fn cmd_cost(dir: &Path) -> Result<CostSummary, CommandError> {
    if !dir.is_dir() {
        return Err(ArchiveError::NotFound(dir.to_path_buf()).into());
    }
    let run = archive::read_run(dir)?;
    let cfg = run.config;
    let mode = cfg
        .mode
        .evolve_mode()
        .ok_or_else(|| CommandError::Other("archive is not an evolve run".into()))?;
    let manifests = archive::read_manifests(dir)?;
    Ok(cost_report(
        mode,
        cfg.outer.rollouts,
        cfg.outer.epochs,
        cfg.inner.epochs,
        &manifests,
    ))
}

/// Writes the generated train/validation/test splits as JSON.
pub fn cmd_splits_export(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CommandError> {
    cfg.validate()?;
    let task = build_task(cfg)?;
    fs::create_dir_all(out).map_err(io(out))?;
    let path = out.join("splits.json");
    write_json(
        &path,
        &serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "task": cfg.task,
            "splits": task.splits_json(),
        }),
    )?;
    Ok(path)
}

/// Renders a cost summary as an aligned two-column table.
pub fn format_cost(c: &CostSummary) -> String {
    let rows = [
        ("mode", format!("{:?}", c.mode).to_lowercase()),
        ("rollouts", c.rollouts.to_string()),
        ("outer_epochs", c.outer_epochs.to_string()),
        ("per_run_epochs", c.per_run_epochs.to_string()),
        ("planned_total", c.planned_total.to_string()),
        ("consumed_total", c.consumed_total.to_string()),
        ("invalid_runs", c.invalid_runs.to_string()),
        ("lineage_steps", c.lineage_steps.to_string()),
        ("parity", c.parity.to_string()),
    ];
    rows.iter().map(|(k, v)| format!("{k:<16}{v}\n")).collect()
}

//! On-disk layout of an evolve run.
//!
//! ```text
//! run.json                      resolved configuration
//! outer_steps.csv               one row per rollout
//! structures.csv                structure-class fractions per outer step
//! dynamics.csv                  mean validation / test score per outer step
//! best.json                     best expression and its retrained scores
//! cost.json                     inner-step accounting
//! manifests/step{t}_rollout{i}.json
//! timings/steps.csv             wall-clock, excluded from reproducibility checks
//! timings/rollouts.csv
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::meta::{BestRecord, EvolveOutput, OuterStepRecord, RunManifest};
use crate::orchestrator::CostSummary;
use crate::SCHEMA_VERSION;

pub const OUTER_STEPS_HEADER: [&str; 8] = ["step", "rollout", "expr", "valid", "class", "v", "test_v", "steps_used"];
pub const STRUCTURES_HEADER: [&str; 4] = ["step", "stable_frac", "unstable_frac", "invalid_frac"];
pub const DYNAMICS_HEADER: [&str; 3] = ["step", "mean_validation", "mean_test"];
pub const TIMINGS_DIR: &str = "timings";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("not found: {0}")]
    NotFound(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a CSV with a schema line followed by `header` and `rows`.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), ArchiveError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let csv_err = |source| ArchiveError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    writeln!(file, "# schema_version={SCHEMA_VERSION}").map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// CSV rendering of a classification or any header-plus-rows table.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("# schema_version={SCHEMA_VERSION}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(r).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    String::from_utf8(out).expect("utf-8 input")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArchiveError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ArchiveError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArchiveError> {
    if !path.exists() {
        return Err(ArchiveError::NotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ArchiveError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub schema_version: u32,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestFile {
    pub schema_version: u32,
    pub best: Option<BestRecord>,
}

pub fn manifest_path(dir: &Path, step: usize, rollout: usize) -> PathBuf {
    dir.join("manifests").join(format!("step{step}_rollout{rollout}.json"))
}

fn outer_rows(records: &[OuterStepRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .flat_map(|r| {
            r.entries.iter().enumerate().map(move |(i, e)| {
                vec![
                    r.step.to_string(),
                    i.to_string(),
                    e.expr.clone(),
                    e.valid.to_string(),
                    e.class.as_str().to_string(),
                    e.v.to_string(),
                    e.test_v.to_string(),
                    e.steps_used.to_string(),
                ]
            })
        })
        .collect()
}

/// Writes the full archive of an evolve run into `dir`.
pub fn write_archive(dir: &Path, config: &RunConfig, out: &EvolveOutput, cost: &CostSummary) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir.join("manifests")).map_err(io_err(dir))?;
    fs::create_dir_all(dir.join(TIMINGS_DIR)).map_err(io_err(dir))?;
    write_json(
        &dir.join("run.json"),
        &RunFile {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
        },
    )?;
    write_csv(&dir.join("outer_steps.csv"), &OUTER_STEPS_HEADER, outer_rows(&out.records))?;
    write_csv(
        &dir.join("structures.csv"),
        &STRUCTURES_HEADER,
        out.records.iter().map(|r| {
            let [s, u, i] = r.class_fractions();
            vec![r.step.to_string(), s.to_string(), u.to_string(), i.to_string()]
        }),
    )?;
    write_csv(
        &dir.join("dynamics.csv"),
        &DYNAMICS_HEADER,
        out.records
            .iter()
            .map(|r| vec![r.step.to_string(), r.mean_v.to_string(), r.mean_test_v.to_string()]),
    )?;
    write_json(
        &dir.join("best.json"),
        &BestFile {
            schema_version: SCHEMA_VERSION,
            best: out.best.clone(),
        },
    )?;
    write_json(&dir.join("cost.json"), cost)?;
    for m in &out.manifests {
        write_json(&manifest_path(dir, m.outer_step, m.rollout_index), m)?;
    }
    write_csv(
        &dir.join(TIMINGS_DIR).join("steps.csv"),
        &["step", "t_max_inner", "t_update", "t_total"],
        out.step_timings.iter().map(|t| {
            vec![
                t.step.to_string(),
                t.t_max_inner.to_string(),
                t.t_update.to_string(),
                t.t_total.to_string(),
            ]
        }),
    )?;
    write_csv(
        &dir.join(TIMINGS_DIR).join("rollouts.csv"),
        &["step", "rollout", "t_inner"],
        out.rollout_timings
            .iter()
            .map(|t| vec![t.step.to_string(), t.rollout.to_string(), t.t_inner.to_string()]),
    )
}

pub fn read_run(dir: &Path) -> Result<RunFile, ArchiveError> {
    read_json(&dir.join("run.json"))
}

pub fn read_manifest(dir: &Path, step: usize, rollout: usize) -> Result<RunManifest, ArchiveError> {
    read_json(&manifest_path(dir, step, rollout))
}

/// Every manifest in the archive, ordered by (step, rollout).
pub fn read_manifests(dir: &Path) -> Result<Vec<RunManifest>, ArchiveError> {
    let mdir = dir.join("manifests");
    if !mdir.is_dir() {
        return Err(ArchiveError::NotFound(mdir));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&mdir).map_err(io_err(&mdir))? {
        let path = entry.map_err(io_err(&mdir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            out.push(read_json::<RunManifest>(&path)?);
        }
    }
    out.sort_by_key(|m| (m.outer_step, m.rollout_index));
    Ok(out)
}

/// Relative paths of every file that must be reproducible, sorted.
pub fn reproducible_files(dir: &Path) -> Result<Vec<PathBuf>, ArchiveError> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ArchiveError> {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            let rel = path.strip_prefix(root).expect("walk stays under root").to_path_buf();
            if rel.starts_with(TIMINGS_DIR) || rel == Path::new("run.json") {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(rel);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metaforge::commands::{self, CommandError};
use metaforge::config::{ConfigError, RunConfig, RunMode};

/// Evolve symbolic reward functions for small policy-learning tasks.
#[derive(Parser)]
#[command(name = "metaforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config and METAFORGE_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for inner runs.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the outer loop and write an archive.
    Evolve(RunArgs),
    /// Train one policy under a fixed reward expression.
    Baseline {
        #[command(flatten)]
        run: RunArgs,
        /// Reward expression; defaults to the config's `baseline:` mode.
        #[arg(long)]
        expr: Option<String>,
    },
    /// Parse and classify each line of an expression file.
    Classify {
        corpus: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run one archived inner run and compare.
    Replay {
        archive: PathBuf,
        #[arg(long)]
        step: usize,
        #[arg(long)]
        rollout: usize,
    },
    /// Inner-step accounting of an archive.
    Cost { archive: PathBuf },
    /// Export the generated task splits as JSON.
    SplitsExport(RunArgs),
}

fn load(args: &RunArgs) -> Result<RunConfig, CommandError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.apply_env()?;
            c
        }
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CommandError> {
    cfg.out
        .clone()
        .ok_or_else(|| ConfigError::Invalid("no output directory: pass --out or set `out`".into()).into())
}

fn write_or_print(text: &str, out: Option<&Path>) -> Result<(), CommandError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CommandError::Other(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Evolve(args) => {
            let cfg = load(&args)?;
            let out = out_dir(&cfg)?;
            let (result, cost) = commands::cmd_evolve(&cfg, &out)?;
            for r in &result.records {
                println!("step {:>3}  mean_v {:.4}  mean_test {:.4}", r.step, r.mean_v, r.mean_test_v);
            }
            if let Some(b) = &result.best {
                println!("best {}  v {:.4}  retrained test {:.4}", b.expr, b.v, b.retrained_test_v);
            }
            print!("{}", commands::format_cost(&cost));
            println!("archive written to {}", out.display());
        }
        Command::Baseline { run, expr } => {
            let cfg = load(&run)?;
            let expr = match (expr, &cfg.mode) {
                (Some(e), _) => e,
                (None, RunMode::Baseline(e)) => e.clone(),
                (None, _) => return Err(ConfigError::Invalid("baseline needs --expr or mode = \"baseline:<expr>\"".into()).into()),
            };
            let out = out_dir(&cfg)?;
            let r = commands::cmd_baseline(&cfg, &expr, &out)?;
            println!(
                "{}  v {:.4}  test {:.4}  steps {}  {}",
                r.expr,
                r.v,
                r.test_v,
                r.steps_used,
                r.terminated_reason.as_str()
            );
        }
        Command::Classify { corpus, out } => {
            let text = std::fs::read_to_string(&corpus).map_err(|e| CommandError::Other(format!("{}: {e}", corpus.display())))?;
            write_or_print(&commands::cmd_classify(&text), out.as_deref())?;
        }
        Command::Replay { archive, step, rollout } => {
            let r = commands::cmd_replay(&archive, step, rollout)?;
            println!("replay ok: step {step} rollout {rollout} v {}", r.v);
        }
        Command::Cost { archive } => {
            let c = commands::cmd_cost(&archive)?;
            print!("{}", commands::format_cost(&c));
            metaforge::archive::write_json(&archive.join("cost.json"), &c)?;
        }
        Command::SplitsExport(args) => {
            let cfg = load(&args)?;
            let path = commands::cmd_splits_export(&cfg, &out_dir(&cfg)?)?;
            println!("splits written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use privmarket::adaptive_market::{stage_schedule, verify_stage_inequalities};
use privmarket::harness::audit::{privacy_audit_with, DEFAULT_PAIRS};
use privmarket::harness::{run_trials, summarize, verify_run_dir, write_outputs, Check, RunConfig, SeedRange};
use serde_json::json;

#[derive(Parser)]
#[command(name = "privmarket", version, about = "Simulate and verify differentially private market makers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one market per seed and write metrics.jsonl, summary.csv and config.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed range `a..b` (end exclusive); overrides the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker threads.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Check a run directory; exit status is non-zero unless every check passes.
    Verify {
        #[arg(long)]
        metrics: PathBuf,
        /// precision | budget | shares | all
        #[arg(long, default_value = "all")]
        check: String,
    },
    /// Structural privacy audit of the noise schedule.
    Audit {
        #[arg(long = "T")]
        horizon: u64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_PAIRS)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Include the full participation table.
        #[arg(long)]
        table: bool,
    },
    /// Print the stage schedule and check its inequalities for k = 1..k_max.
    Schedule {
        #[arg(long = "B1")]
        base_loss: f64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 20)]
        k_max: u32,
    },
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, out, seeds, parallel } => {
            let mut cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = seeds {
                cfg.seeds = SeedRange::parse(&s)?;
            }
            let Some(dir) = out.or_else(|| cfg.output_dir.clone()) else {
                bail!("no output directory: pass --out or set output_dir in the config");
            };
            cfg.output_dir = Some(dir.clone());
            let rows = run_trials(&cfg, cfg.seeds.range(), parallel)?;
            let files = write_outputs(&cfg, &rows, &dir)?;
            eprintln!("wrote {} trials to {}", rows.len(), files.metrics.display());
            for r in summarize(&cfg, &rows)? {
                println!(
                    "{:<18} mean {:>14.6}  se {:>12.6}  min {:>14.6}  max {:>14.6}{}",
                    r.metric,
                    r.mean,
                    r.std_err,
                    r.min,
                    r.max,
                    r.exceed_fraction.map_or(String::new(), |f| format!("  exceed {f:.4}"))
                );
            }
            Ok(true)
        }
        Command::Verify { metrics, check } => {
            let check: Check = check.parse()?;
            let reports = verify_run_dir(&metrics, check)?;
            let passed = reports.iter().all(|r| r.passed);
            print_json(&json!({ "passed": passed, "checks": reports }))?;
            Ok(passed)
        }
        Command::Audit { horizon, d, epsilon, pairs, seed, table } => {
            let mut a = serde_json::to_value(privacy_audit_with(horizon, d, epsilon, pairs, seed)?)?;
            let passed = a["passed"].as_bool().unwrap_or(false);
            if let (false, Some(o)) = (table, a.as_object_mut()) {
                o.remove("participation");
            }
            print_json(&a)?;
            Ok(passed)
        }
        Command::Schedule { base_loss, d, alpha, gamma, epsilon, k_max } => {
            let s = stage_schedule(base_loss, d, alpha, gamma, epsilon, k_max.max(1))?;
            let report = verify_stage_inequalities(&s, k_max.max(1))?;
            print_json(&json!({ "schedule": s, "inequalities": report }))?;
            Ok(report.all_passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

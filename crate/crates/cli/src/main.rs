use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mgmc::config::{ExperimentKind, RunConfig};
use mgmc::experiments::{self, with_threads};
use mgmc::verify::{run_suite, SuiteOptions};

#[derive(Parser)]
#[command(name = "mgmc", version, about = "Multigrid Monte Carlo sampler experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one chain and write its QoI series.
    Sample(RunArgs),
    /// IACT and cost per sampler and grid.
    Performance(RunArgs),
    /// Ensemble convergence of QoI mean and variance from zero.
    Convergence(RunArgs),
    /// Autocorrelation function and IACT of post-warmup chains.
    Autocorrelation(RunArgs),
    /// RMSE of the running QoI average against chain length.
    Rmse(RunArgs),
    /// Oracle and moment checks on small problems.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config `output`, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for chain ensembles (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Chains per moment check.
    #[arg(long)]
    chains: Option<usize>,
    /// Swap in a splitting without the low-rank term (negative test).
    #[arg(long, hide = true)]
    broken_splitting: bool,
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    rng: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a RunConfig>,
    total_seconds: f64,
    results: T,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    base: Option<PathBuf>,
    threads: Option<usize>,
}

fn load(args: &RunArgs, kind: ExperimentKind) -> Result<Run> {
    let mut cfg = RunConfig::from_path(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(k) = cfg.experiment.kind {
        if k != kind {
            bail!("config is for the {k:?} experiment, not {kind:?}");
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let base = args.config.parent().map(Path::to_path_buf);
    Ok(Run {
        cfg,
        out,
        base,
        threads: args.threads,
    })
}

fn record<T: Serialize>(run: &Run, command: &str, start: Instant, results: T) -> Result<()> {
    let rec = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        rng: mgmc::rng::RNG_ALGORITHM,
        config_hash: Some(run.cfg.hash()),
        seed: run.cfg.seed,
        config: Some(&run.cfg),
        total_seconds: start.elapsed().as_secs_f64(),
        results,
    };
    write_json(&run.out.join("run.json"), &rec)
}

#[derive(Serialize)]
struct SeriesRow {
    step: usize,
    z: f64,
}

fn run(cli: Cli) -> Result<bool> {
    let start = Instant::now();
    match cli.command {
        Command::Sample(args) => {
            let run = load(&args, ExperimentKind::Sample)?;
            let base = run.base.as_deref();
            let out = with_threads(run.threads, || experiments::sample(&run.cfg, base))??;
            let rows: Vec<SeriesRow> =
                out.z.iter().enumerate().map(|(step, &z)| SeriesRow { step, z }).collect();
            write_csv(&run.out.join("sample.csv"), &rows)?;
            if let Some(theta) = &out.theta {
                write_json(&run.out.join("state.json"), theta)?;
            }
            record(
                &run,
                "sample",
                start,
                serde_json::json!({
                    "cells": out.cells,
                    "unknowns": out.unknowns,
                    "sampler": out.sampler,
                    "setup_seconds": out.setup_seconds,
                    "seconds_per_update": out.seconds_per_update,
                    "steps": out.z.len(),
                }),
            )?;
        }
        Command::Performance(args) => {
            let run = load(&args, ExperimentKind::Performance)?;
            let base = run.base.as_deref();
            let rows = with_threads(run.threads, || experiments::performance(&run.cfg, base))??;
            write_csv(&run.out.join("performance.csv"), &rows)?;
            record(&run, "performance", start, &rows)?;
        }
        Command::Convergence(args) => {
            let run = load(&args, ExperimentKind::Convergence)?;
            let base = run.base.as_deref();
            let (rows, summary) =
                with_threads(run.threads, || experiments::convergence(&run.cfg, base))??;
            write_csv(&run.out.join("convergence.csv"), &rows)?;
            write_csv(&run.out.join("convergence_summary.csv"), &summary)?;
            record(&run, "convergence", start, &summary)?;
        }
        Command::Autocorrelation(args) => {
            let run = load(&args, ExperimentKind::Autocorrelation)?;
            let base = run.base.as_deref();
            let (rows, perf) = with_threads(run.threads, || {
                experiments::autocorrelation_experiment(&run.cfg, base)
            })??;
            write_csv(&run.out.join("autocorrelation.csv"), &rows)?;
            write_csv(&run.out.join("performance.csv"), &perf)?;
            record(&run, "autocorrelation", start, &perf)?;
        }
        Command::Rmse(args) => {
            let run = load(&args, ExperimentKind::Rmse)?;
            let base = run.base.as_deref();
            let rows = with_threads(run.threads, || experiments::rmse(&run.cfg, base))??;
            write_csv(&run.out.join("rmse.csv"), &rows)?;
            record(&run, "rmse", start, &rows)?;
        }
        Command::Verify(args) => {
            let mut opts = SuiteOptions::default();
            if let Some(seed) = args.seed {
                opts.seed = seed;
            }
            if let Some(chains) = args.chains {
                opts.chains = chains;
            }
            opts.broken_splitting = args.broken_splitting;
            let results = with_threads(args.threads, || run_suite(&opts))?;
            let failed: Vec<_> = results.iter().filter(|r| !r.pass).collect();
            for r in &results {
                let mark = if r.pass { "ok  " } else { "FAIL" };
                eprintln!("{mark} {} ({:.3e} vs {:.3e})", r.name, r.value, r.bound);
            }
            let out = args.out.unwrap_or_else(|| PathBuf::from("out"));
            fs::create_dir_all(&out)?;
            let rec = RunRecord {
                command: "verify",
                version: env!("CARGO_PKG_VERSION"),
                rng: mgmc::rng::RNG_ALGORITHM,
                config_hash: None,
                seed: opts.seed,
                config: None,
                total_seconds: start.elapsed().as_secs_f64(),
                results: serde_json::json!({
                    "options": opts,
                    "passed": failed.is_empty(),
                    "checks": results,
                }),
            };
            write_json(&out.join("verify.json"), &rec)?;
            return Ok(failed.is_empty());
        }
    }
    Ok(true)
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

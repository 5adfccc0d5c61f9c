use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use divlab_cli::{execute, suite_config, ConfigError, RunConfig, RunOptions};

/// Run divlab checks from a TOML configuration or a built-in suite.
#[derive(Debug, Parser)]
#[command(name = "divlab", version)]
struct Args {
    /// Built-in suite: ucp, lifting, wegner, scaling, mollify or all.
    #[arg(env = "DIVLAB_SUITE", required_unless_present = "config", conflicts_with = "config")]
    suite: Option<String>,

    /// Run configuration file.
    #[arg(long, short, env = "DIVLAB_CONFIG")]
    config: Option<PathBuf>,

    /// Output directory; defaults to the config's `output` or `divlab-out`.
    #[arg(long, short, env = "DIVLAB_OUT")]
    out: Option<PathBuf>,

    /// Master seed.
    #[arg(long, env = "DIVLAB_SEED")]
    seed: Option<u64>,

    /// Worker threads (default: machine parallelism).
    #[arg(long, env = "DIVLAB_WORKERS")]
    workers: Option<usize>,

    /// Multiply every grid's cells per unit length.
    #[arg(long, env = "DIVLAB_RESOLUTION_MULTIPLIER")]
    resolution_multiplier: Option<u32>,

    /// Override Monte Carlo sample counts of a suite.
    #[arg(long, env = "DIVLAB_SAMPLES")]
    samples: Option<usize>,
}

fn load(args: &Args) -> anyhow::Result<(RunConfig, Option<std::time::Duration>)> {
    let (mut cfg, budget) = match (&args.config, &args.suite) {
        (Some(path), _) => (RunConfig::load(path)?, None),
        (None, Some(name)) => (suite_config(name, args.samples)?, divlab_cli::suites::budget(name)),
        (None, None) => anyhow::bail!("give a suite name or --config"),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.resolution_multiplier {
        cfg.resolution_multiplier = m;
    }
    Ok((cfg, budget))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (cfg, budget) = match load(&args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let out = args.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("divlab-out"));
    let summary = match execute(&cfg, &out, &RunOptions { workers: args.workers, budget }) {
        Ok(s) => s,
        Err(e) => {
            if let Some(v) = e.downcast_ref::<ConfigError>() {
                eprintln!("invalid configuration: {v}");
            } else {
                eprintln!("error: {e:#}");
            }
            return ExitCode::from(2);
        }
    };
    for item in &summary.items {
        let mark = if item.as_expected { "ok  " } else { "FAIL" };
        let detail = item.error.clone().unwrap_or_else(|| {
            format!("{} (margin {:.3e})", item.status, item.margin.unwrap_or(f64::NAN))
        });
        println!("{mark} {:<40} {:<20} {detail}", item.name, item.kind);
    }
    let bad = summary.items.iter().filter(|i| !i.as_expected).count();
    println!(
        "{} checks, {bad} unexpected, {:.1} s; reports in {}",
        summary.items.len(),
        summary.wall_time.as_secs_f64(),
        summary.out_dir.display()
    );
    ExitCode::from(summary.exit_code() as u8)
}

//! Command-line front end: run a config, validate it, or generate synthetic data.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use factor_backtest::ingest::write_dataset;
use factor_backtest::pipeline::{has_errors, run, validate, RunConfig};
use factor_backtest::synth::{generate_raw, SynthSpec};

#[derive(Parser)]
#[command(name = "factor-backtest", version, about = "Factor-model backtests on monthly equity panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write the report bundle.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Write a synthetic dataset in the ingest CSV layout plus its ground truth.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn report_diagnostics(cfg: &RunConfig) -> bool {
    let diags = validate(cfg);
    for d in &diags {
        eprintln!("{d}");
    }
    has_errors(&diags)
}

fn cmd_run(config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if report_diagnostics(&cfg) {
        bail!("config has errors");
    }
    let out = match out.or_else(|| cfg.out_dir()) {
        Some(o) => o,
        None => bail!("no output directory: pass --out or set `out` in the config"),
    };
    let written = run(&cfg, &out)?;
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn cmd_validate(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    if report_diagnostics(&cfg) {
        bail!("config has errors");
    }
    println!("ok");
    Ok(())
}

fn cmd_synth(spec: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SynthSpec = toml::from_str(&text).context("parsing synth spec")?;
    let (raw, truth) = generate_raw(&spec)?;
    write_dataset(&raw, out)?;
    let path = out.join("ground_truth.json");
    std::fs::write(&path, serde_json::to_string_pretty(&truth)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote synthetic dataset to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, out, seed),
        Command::Validate { config } => cmd_validate(&config),
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

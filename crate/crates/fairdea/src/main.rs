use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use fairdea::error::InStage;
use fairdea::pipeline::{ensure_dir, run_stage, Context};
use fairdea::{run_pipeline, PipelineConfig, Stage};

#[derive(Parser)]
#[command(
    name = "fairdea",
    version,
    about = "Fairness audit of allocation outcomes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Synth(Common),
    /// Resample a cohort to target group proportions.
    Resample(Common),
    /// Cross-fitted confounder adjustment of x1, x2 and y1.
    Debias(Common),
    /// Efficiency scores, frontier projections and histograms.
    Dea(Common),
    /// Group-conditional prediction intervals for the scores.
    Conformal(Common),
    /// Pairwise kernel two-sample tests between groups.
    Mmd(Common),
    /// Direct and indirect effects with bootstrap intervals.
    Mediation(Common),
    /// Run every stage in order and write report.json.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Input file; defaults to the previous stage's artifact in the output directory.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn load(common: &Common) -> anyhow::Result<(PipelineConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path).in_stage(Stage::Config)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .context("no output directory: pass --out or set \"out\" in the config")?;
    config.validate().in_stage(Stage::Config)?;
    Ok((config, out))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (stage, common) = match &cli.command {
        Command::Synth(c) => (Stage::Synth, c),
        Command::Resample(c) => (Stage::Resample, c),
        Command::Debias(c) => (Stage::Debias, c),
        Command::Dea(c) => (Stage::Dea, c),
        Command::Conformal(c) => (Stage::Conformal, c),
        Command::Mmd(c) => (Stage::Mmd, c),
        Command::Mediation(c) => (Stage::Mediation, c),
        Command::Pipeline(c) => {
            let (mut config, out) = load(c)?;
            if let Some(input) = &c.input {
                config.input = Some(input.clone());
            }
            run_pipeline(&config, &out)?;
            println!("{}", out.join(fairdea::pipeline::REPORT).display());
            return Ok(());
        }
    };
    let (config, out) = load(common)?;
    ensure_dir(&out)?;
    let ctx = Context {
        config: &config,
        out: &out,
        master_seed: config.seed,
    };
    let section = run_stage(&ctx, stage, common.input.as_deref())?;
    let path = out.join(format!("{stage}.json"));
    fairdea::csvio::write_json(&path, &section).in_stage(Stage::Report)?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

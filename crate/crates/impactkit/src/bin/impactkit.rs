//! `impactkit` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use impactkit::config::{Overrides, RunConfig, Stages};
use impactkit::error::AppResult;
use impactkit::pipeline::{self, Context};

#[derive(Debug, Parser)]
#[command(name = "impactkit", version, about = "Synthetic control and structural time-series impact analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Benchmark synthetic control: weights, paths, balance and plots.
    Fit(Common),
    /// In-time and in-space placebos, RMSPE ratios, p-values, leave-one-out and cross-validation.
    Robustness(Common),
    /// Internal versus external shortfall against a potential-growth path.
    Decompose(Common),
    /// Structural time-series counterfactual with donor regressors.
    Bsts(Common),
    /// Factor-model panel with known effect, plus a config to analyse it.
    Simulate(Common),
    /// Every stage above plus a combined summary.
    Report(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Long-format panel CSV (unit,variable,year,value).
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    treated: Option<String>,
    #[arg(long)]
    treatment_year: Option<i32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [fallback: $IMPACTKIT_OUT, then ./impactkit-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for placebo, leave-one-out, multistart and chain jobs.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn config(&self) -> AppResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            panel: self.panel.clone(),
            treated: self.treated.clone(),
            treatment_year: self.treatment_year,
            seed: self.seed,
            out: self.out.clone(),
            jobs: self.jobs,
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> AppResult<Vec<PathBuf>> {
    let (name, common) = match &cli.command {
        Command::Fit(c) => ("fit", c),
        Command::Robustness(c) => ("robustness", c),
        Command::Decompose(c) => ("decompose", c),
        Command::Bsts(c) => ("bsts", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Report(c) => ("report", c),
    };
    let cfg = common.config()?;
    if name == "simulate" {
        cfg.simulate.validate()?;
        pipeline::cmd_simulate(&cfg)?;
        return Ok(vec![cfg.out_dir()]);
    }
    let stages = match name {
        "fit" => Stages::FIT,
        "robustness" => Stages { robustness: true, ..Stages::FIT },
        "decompose" => Stages { decompose: true, ..Stages::FIT },
        "bsts" => Stages { bsts: true, ..Stages::FIT },
        _ => Stages::ALL,
    };
    let ctx = Context::new(cfg.resolve_for(stages)?);
    match name {
        "fit" => drop(pipeline::cmd_fit(&ctx)?),
        "robustness" => drop(pipeline::cmd_robustness(&ctx, None)?),
        "decompose" => drop(pipeline::cmd_decompose(&ctx, None)?),
        "bsts" => drop(pipeline::cmd_bsts(&ctx)?),
        _ => drop(pipeline::cmd_report(&ctx)?),
    }
    Ok(vec![ctx.run.out])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(dirs) => {
            for d in dirs {
                eprintln!("artifacts written to {}", d.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

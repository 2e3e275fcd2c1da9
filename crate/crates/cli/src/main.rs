//! `scar`: runs checkpoint-recovery and perturbation-bound experiments from
//! a TOML config and writes CSV rows plus a JSON summary.
//!
//! Exit codes: 0 success, 1 other failure (including a failed `verify`
//! check), 2 config error, 3 a required baseline never converged.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use scar_core::harness::bound_study::run_bound_study;
use scar_core::harness::output::{write_csv, write_json};
use scar_core::harness::sweep::{run_ckpt_sweep, run_sweep, SweepOutput};
use scar_core::harness::verify;
use scar_core::{Experiment, ExperimentConfig, ScarError};

#[derive(Parser)]
#[command(
    name = "scar",
    version,
    about = "Checkpoint-recovery and perturbation-bound experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One failure-and-recovery trial of the config's own cell.
    Run {
        #[command(flatten)]
        common: Common,
        /// Trial index; the trial seed is base_seed + index.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Full and partial recovery across the configured loss fractions.
    Sweep(Common),
    /// Checkpoint ratios and strategies at a fixed loss fraction.
    CkptSweep(Common),
    /// Measured perturbation cost against the contraction bound (QP only).
    BoundStudy(Common),
    /// Monte Carlo checks of the recovery identities and distance envelope.
    Verify {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; dotted keys override the preset it names.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config to use when no file is given.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

impl Common {
    fn experiment(&self) -> Result<Experiment> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => return Err(ScarError::Config("pass --config <path> or --preset <name>".into()).into()),
        };
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        cfg.validate()?;
        Ok(Experiment::new(cfg)?)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn write_sweep(out: &Path, sweep: &SweepOutput) -> Result<()> {
    write_csv(&out.join("results.csv"), &sweep.results)?;
    write_json(&out.join("summary.json"), &sweep.summary)?;
    for c in &sweep.summary.cells {
        println!(
            "{:<8} {:<7} fraction {:<6} ratio {:<6} rework {:>9.2} +- {:<8.2} censored {}",
            c.strategy, c.recovery, c.fraction, c.ratio, c.rework.mean, c.rework.half_width, c.censored
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common, trial } => {
            let exp = common.experiment()?;
            let out = common.out_dir()?;
            let row = exp.run_trial(trial, Some(out))?;
            write_csv(&out.join("results.csv"), std::slice::from_ref(&row))?;
            println!(
                "trial {} T {} rework {:?} converged {:?} bytes saved {} restored {}",
                row.trial, row.failure_iter, row.rework_iters, row.converged_iter, row.bytes_saved, row.bytes_restored
            );
        }
        Command::Sweep(common) => {
            let exp = common.experiment()?;
            write_sweep(common.out_dir()?, &run_sweep(&exp, common.parallel)?)?;
        }
        Command::CkptSweep(common) => {
            let exp = common.experiment()?;
            write_sweep(common.out_dir()?, &run_ckpt_sweep(&exp, common.parallel)?)?;
        }
        Command::BoundStudy(common) => {
            let exp = common.experiment()?;
            let study = run_bound_study(&exp, common.parallel)?;
            let out = common.out_dir()?;
            write_csv(&out.join("results.csv"), &study.rows)?;
            write_json(&out.join("summary.json"), &study.summary)?;
            let s = &study.summary;
            println!(
                "c {:.6} kappa {:.2} eps {:.3e} perturbed at {}",
                s.c, s.kappa, s.epsilon, s.perturb_at
            );
            for m in &s.modes {
                println!(
                    "{:<12} violations {}/{} max cost {:?} max bound {:.2} censored {}",
                    m.mode, m.violations, m.trials, m.max_cost, m.max_bound, m.censored
                );
            }
        }
        Command::Verify { out, seed } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let rows = verify::run_all(seed)?;
            write_csv(&out.join("verify.csv"), &rows)?;
            for r in &rows {
                println!(
                    "{} {:<22} parameter {:<5} value {:.6} target {:.6}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.check,
                    r.parameter,
                    r.value,
                    r.target
                );
            }
            return Ok(rows.iter().all(|r| r.passed));
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
            match e.downcast_ref::<ScarError>() {
                Some(ScarError::Config(_)) => ExitCode::from(2),
                Some(ScarError::NonConvergence { .. }) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

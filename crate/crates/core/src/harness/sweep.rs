//! Recovery sweeps over loss fractions and checkpoint sweeps over save
//! ratios and strategies.

use rayon::prelude::*;
use serde::Serialize;

use super::stats::{mean_ci, MeanCi};
use super::trial::{Cell, Experiment, TrialResult};
use crate::checkpoint::{CheckpointPolicy, RecoveryMode, Selection};
use crate::error::{Result, ScarError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub strategy: &'static str,
    pub recovery: &'static str,
    pub fraction: f64,
    pub ratio: f64,
    pub trials: usize,
    pub censored: usize,
    pub rework: MeanCi,
    pub mean_bytes_saved: f64,
    pub mean_bytes_restored: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub name: String,
    pub kind: &'static str,
    pub model: &'static str,
    pub threshold: f64,
    pub trials: usize,
    pub base_seed: u64,
    /// True when any cell holds a trial that never re-converged.
    pub censored: bool,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub results: Vec<TrialResult>,
    pub summary: SweepSummary,
}

impl SweepOutput {
    /// The summary of the cell with these labels.
    pub fn cell(&self, strategy: Selection, recovery: RecoveryMode, fraction: f64, ratio: f64) -> Option<&CellSummary> {
        self.summary.cells.iter().find(|c| {
            c.strategy == strategy.name() && c.recovery == recovery.name() && c.fraction == fraction && c.ratio == ratio
        })
    }
}

/// Runs `cells` for every trial on a pool of `parallel` threads. Rows come
/// back ordered by trial, then by cell.
pub fn run_trials(exp: &Experiment, cells: &[Cell], parallel: usize) -> Result<Vec<TrialResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| ScarError::Config(e.to_string()))?;
    let per_trial: Vec<Vec<TrialResult>> = pool.install(|| {
        (0..exp.cfg.trials)
            .into_par_iter()
            .map(|t| exp.run_cells(t, cells))
            .collect::<Result<_>>()
    })?;
    Ok(per_trial.into_iter().flatten().collect())
}

fn summarize(exp: &Experiment, kind: &'static str, cells: &[Cell], results: &[TrialResult]) -> SweepSummary {
    let per_cell = cells.len();
    let summaries: Vec<CellSummary> = cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let rows: Vec<&TrialResult> = results.iter().skip(i).step_by(per_cell).collect();
            let rework: Vec<f64> = rows.iter().filter_map(|r| r.rework_iters).map(|r| r as f64).collect();
            let n = rows.len() as f64;
            CellSummary {
                strategy: cell.strategy.name(),
                recovery: cell.recovery.name(),
                fraction: rows.first().map_or(cell.fraction, |r| r.fraction),
                ratio: cell.policy.ratio(),
                trials: rows.len(),
                censored: rows.iter().filter(|r| r.censored).count(),
                rework: mean_ci(&rework, 0.95),
                mean_bytes_saved: rows.iter().map(|r| r.bytes_saved as f64).sum::<f64>() / n,
                mean_bytes_restored: rows.iter().map(|r| r.bytes_restored as f64).sum::<f64>() / n,
            }
        })
        .collect();
    SweepSummary {
        name: exp.cfg.name.clone(),
        kind,
        model: exp.cfg.solver.model.name(),
        threshold: exp.criterion.threshold,
        trials: exp.cfg.trials,
        base_seed: exp.cfg.base_seed,
        censored: summaries.iter().any(|c| c.censored > 0),
        cells: summaries,
    }
}

/// Full and partial recovery at every configured loss fraction, using the
/// configured checkpoint policy.
pub fn recovery_cells(exp: &Experiment) -> Result<Vec<Cell>> {
    let base = exp.default_cell()?;
    let mut cells = Vec::new();
    for &fraction in &exp.cfg.failure.fractions {
        for recovery in [RecoveryMode::Full, RecoveryMode::Partial] {
            cells.push(Cell {
                recovery,
                fraction,
                ..base.clone()
            });
        }
    }
    Ok(cells)
}

/// The traditional reference (full checkpoints every `C`, full recovery)
/// followed by every ratio and strategy with the configured recovery.
pub fn checkpoint_cells(exp: &Experiment) -> Result<Vec<Cell>> {
    let spec = &exp.cfg.checkpoint;
    let fraction = exp.cfg.failure.fraction;
    let mut cells = vec![Cell {
        strategy: Selection::Full,
        policy: CheckpointPolicy::full(spec.interval)?,
        recovery: RecoveryMode::Full,
        fraction,
    }];
    for &ratio in &spec.ratios {
        for &strategy in &spec.strategies {
            cells.push(Cell {
                strategy,
                policy: spec.policy(ratio, strategy)?,
                recovery: exp.cfg.recovery,
                fraction,
            });
        }
    }
    Ok(cells)
}

pub fn run_sweep(exp: &Experiment, parallel: usize) -> Result<SweepOutput> {
    if exp.cfg.trials < 2 {
        return Err(ScarError::Config("a sweep needs at least 2 trials".into()));
    }
    let cells = recovery_cells(exp)?;
    let results = run_trials(exp, &cells, parallel)?;
    let summary = summarize(exp, "sweep", &cells, &results);
    Ok(SweepOutput { results, summary })
}

pub fn run_ckpt_sweep(exp: &Experiment, parallel: usize) -> Result<SweepOutput> {
    if exp.cfg.trials < 2 {
        return Err(ScarError::Config("a sweep needs at least 2 trials".into()));
    }
    let cells = checkpoint_cells(exp)?;
    let results = run_trials(exp, &cells, parallel)?;
    let summary = summarize(exp, "ckpt-sweep", &cells, &results);
    Ok(SweepOutput { results, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::output::csv_string;

    fn small(preset: &str, extra: &str) -> Experiment {
        let cfg = ExperimentConfig::from_toml_str(&format!("preset = \"{preset}\"\ntrials = 4\n{extra}")).unwrap();
        Experiment::new(cfg).unwrap()
    }

    #[test]
    fn sweep_has_two_cells_per_fraction_and_whole_loss_agrees() {
        let exp = small("qp", "criterion.calibrate_iters = 60\nsolver.max_iters = 600");
        let out = run_sweep(&exp, 2).unwrap();
        assert_eq!(out.results.len(), 4 * 8);
        assert_eq!(out.summary.cells.len(), 8);
        let full = out.cell(Selection::Full, RecoveryMode::Full, 1.0, 1.0).unwrap();
        let partial = out.cell(Selection::Full, RecoveryMode::Partial, 1.0, 1.0).unwrap();
        assert_eq!(full.rework, partial.rework);
    }

    #[test]
    fn parallelism_does_not_change_output() {
        let exp = small("qp", "criterion.calibrate_iters = 60\nsolver.max_iters = 600");
        let a = run_ckpt_sweep(&exp, 1).unwrap();
        let b = run_ckpt_sweep(&exp, 3).unwrap();
        assert_eq!(csv_string(&a.results).unwrap(), csv_string(&b.results).unwrap());
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn ratio_one_strategies_coincide() {
        let exp = small("qp", "criterion.calibrate_iters = 60\nsolver.max_iters = 600");
        let out = run_ckpt_sweep(&exp, 2).unwrap();
        let reworks: Vec<_> = [Selection::Priority, Selection::Round, Selection::Random]
            .iter()
            .map(|s| out.cell(*s, RecoveryMode::Partial, 0.5, 1.0).unwrap().rework)
            .collect();
        assert!(reworks.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn a_single_trial_cannot_be_summarized() {
        let cfg = ExperimentConfig::from_toml_str("preset = \"qp\"\ntrials = 1").unwrap();
        let exp = Experiment::new(cfg).unwrap();
        assert!(matches!(run_sweep(&exp, 1), Err(ScarError::Config(_))));
    }
}

//! One failure-and-recovery trial against its unperturbed baseline.

use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, LossModel, NormChoice};
use crate::bounds::{self, ConvergenceProfile};
use crate::checkpoint::log::LogSink;
use crate::checkpoint::{
    self, CheckpointPolicy, FailureEvent, LdaSmoothing, RecoveryMode, RunningCheckpoint, Selection, ShardStore,
};
use crate::datagen::Dataset;
use crate::error::{Result, ScarError};
use crate::params::{diff_norm, random_partition, NormMetric, ParameterState};
use crate::perturb::PerturbationLedger;
use crate::solvers::{ConvergenceCriterion, CriterionMetric, ModelKind, Solver, SolverConfig};

/// One (checkpoint policy, recovery mode, loss fraction) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Strategy label reported for the cell; ratio-1 policies save every
    /// unit whatever the label.
    pub strategy: Selection,
    pub policy: CheckpointPolicy,
    pub recovery: RecoveryMode,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub model: &'static str,
    pub strategy: &'static str,
    pub recovery: &'static str,
    pub fraction: f64,
    pub ratio: f64,
    #[serde(rename = "T")]
    pub failure_iter: u64,
    pub rework_iters: Option<i64>,
    pub bound: Option<f64>,
    pub converged_iter: Option<u64>,
    pub bytes_saved: u64,
    pub bytes_restored: u64,
    pub censored: bool,
}

/// A config bound to its dataset and resolved convergence criterion.
#[derive(Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub data: Dataset,
    pub criterion: ConvergenceCriterion,
}

/// The baseline up to the failure point, shared by every cell of a trial.
struct Prefix {
    /// Criterion value per iteration of the whole baseline run.
    trace: Vec<f64>,
    /// Iteration at which the baseline first meets the criterion.
    converged: u64,
    state_at_t: ParameterState,
    checkpoints: Vec<RunningCheckpoint>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let data = cfg.dataset.materialize(&cfg.base_dir)?;
        let reference = Solver::new(cfg.solver.clone(), &data)?;
        let optimum = match cfg.criterion.metric {
            CriterionMetric::DistanceToOptimum => Some(reference.analytic_optimum()?),
            CriterionMetric::LossThreshold => None,
        };
        let threshold = match (cfg.criterion.threshold, cfg.criterion.calibrate_iters) {
            (Some(t), _) => t,
            (None, Some(n)) => {
                let probe = ConvergenceCriterion {
                    metric: cfg.criterion.metric,
                    threshold: f64::NEG_INFINITY,
                    optimum: optimum.clone(),
                };
                let solver = Solver::new(self_seeded(&cfg.solver, cfg.base_seed), &data)?;
                let mut x = solver.init()?;
                for _ in 0..n {
                    solver.step(&mut x)?;
                }
                probe.evaluate(&solver, &x)?
            }
            (None, None) => unreachable!("validated"),
        };
        let criterion = ConvergenceCriterion {
            metric: cfg.criterion.metric,
            threshold,
            optimum,
        };
        criterion.validate()?;
        Ok(Self { cfg, data, criterion })
    }

    pub fn seed(&self, trial: usize) -> u64 {
        self.cfg.base_seed.wrapping_add(trial as u64)
    }

    pub fn solver(&self, seed: u64) -> Result<Solver<'_>> {
        Solver::new(self_seeded(&self.cfg.solver, seed), &self.data)
    }

    pub fn metric(&self, solver: &Solver<'_>) -> NormMetric {
        match self.cfg.norm {
            NormChoice::Auto | NormChoice::ScaledTv => solver.norm_metric(),
            NormChoice::Euclidean => NormMetric::euclidean(),
        }
    }

    fn lda_smoothing(&self) -> Option<LdaSmoothing> {
        (self.cfg.solver.model == ModelKind::Lda).then_some(LdaSmoothing {
            topics: self.cfg.solver.topics,
            alpha: self.cfg.solver.dirichlet_alpha,
        })
    }

    /// The single cell described by the top-level config keys.
    pub fn default_cell(&self) -> Result<Cell> {
        Ok(Cell {
            strategy: self.cfg.checkpoint.selection,
            policy: self
                .cfg
                .checkpoint
                .policy(self.cfg.checkpoint.ratio, self.cfg.checkpoint.selection)?,
            recovery: self.cfg.recovery,
            fraction: self.cfg.failure.fraction,
        })
    }

    /// Runs the config's own cell, writing its checkpoint log to
    /// `<run_dir>/ckpt-<trial>.scar` when a directory is given.
    pub fn run_trial(&self, trial: usize, run_dir: Option<&Path>) -> Result<TrialResult> {
        let cell = self.default_cell()?;
        let sink = match run_dir {
            Some(dir) => LogSink::create(&dir.join(format!("ckpt-{trial}.scar")))?,
            None => LogSink::memory(),
        };
        let mut out = self.run_cells_with_sinks(trial, std::slice::from_ref(&cell), vec![sink])?;
        Ok(out.remove(0))
    }

    /// Runs every cell of one trial against a shared baseline, failure time
    /// and failure seed.
    pub fn run_cells(&self, trial: usize, cells: &[Cell]) -> Result<Vec<TrialResult>> {
        let policies = distinct_policies(cells);
        let sinks = policies.iter().map(|_| LogSink::memory()).collect();
        self.run_cells_with_sinks(trial, cells, sinks)
    }

    fn run_cells_with_sinks(&self, trial: usize, cells: &[Cell], sinks: Vec<LogSink>) -> Result<Vec<TrialResult>> {
        let seed = self.seed(trial);
        let solver = self.solver(seed)?;
        let metric = self.metric(&solver);
        let max_iters = self.cfg.solver.max_iters;
        let failure_iter = checkpoint::sample_failure_iteration(self.cfg.geom_p(), seed, max_iters)?;
        let policies = distinct_policies(cells);
        let prefix = self.baseline(&solver, &metric, &policies, sinks, failure_iter, seed)?;

        let bound_profile = self.bound_profile(&prefix)?;
        let ids: Vec<u64> = prefix.state_at_t.unit_ids().collect();
        let partition = random_partition(ids.iter().copied(), self.cfg.failure.shards, seed)?;

        cells
            .iter()
            .map(|cell| {
                let mut store = ShardStore::new(&prefix.state_at_t, partition.clone())?;
                let event = match self.cfg.failure.loss_model {
                    LossModel::Units => {
                        checkpoint::inject_failure(&mut store, self.cfg.geom_p(), cell.fraction, seed, max_iters)?
                    }
                    LossModel::Shards => checkpoint::inject_shard_failure(
                        &mut store,
                        self.cfg.geom_p(),
                        self.cfg.failure.kill_shards,
                        seed,
                        max_iters,
                    )?,
                };
                debug_assert_eq!(event.iteration, failure_iter);
                let ckpt = &prefix.checkpoints[policies.iter().position(|p| *p == cell.policy).expect("collected")];
                let outcome = self.recover_and_finish(&solver, &metric, &prefix, ckpt, &event, cell.recovery)?;
                store.restore(&outcome.recovered)?;
                debug_assert!(store.inaccessible().is_empty());
                let bound = match (&bound_profile, outcome.delta_norm) {
                    (Some(profile), Some(norm)) => {
                        let ledger = PerturbationLedger::from_norms(profile.c(), [(failure_iter, norm)])?;
                        Some(bounds::cost_bound(profile, &ledger)?)
                    }
                    _ => None,
                };
                let rework = outcome.converged.map(|k| k as i64 - prefix.converged as i64);
                Ok(TrialResult {
                    trial,
                    seed,
                    model: self.cfg.solver.model.name(),
                    strategy: cell.strategy.name(),
                    recovery: cell.recovery.name(),
                    fraction: match self.cfg.failure.loss_model {
                        LossModel::Units => cell.fraction,
                        LossModel::Shards => event.fraction,
                    },
                    ratio: cell.policy.ratio(),
                    failure_iter,
                    rework_iters: rework,
                    bound,
                    converged_iter: outcome.converged,
                    bytes_saved: ckpt.bytes_appended(),
                    bytes_restored: outcome.bytes_restored,
                    censored: outcome.converged.is_none(),
                })
            })
            .collect()
    }

    fn baseline(
        &self,
        solver: &Solver<'_>,
        metric: &NormMetric,
        policies: &[CheckpointPolicy],
        sinks: Vec<LogSink>,
        failure_iter: u64,
        seed: u64,
    ) -> Result<Prefix> {
        let mut x = solver.init()?;
        let smoothing = self.lda_smoothing();
        let mut checkpoints = sinks
            .into_iter()
            .map(|sink| RunningCheckpoint::initialize(&x, sink, smoothing))
            .collect::<Result<Vec<_>>>()?;
        let mut cursors = vec![0usize; policies.len()];
        let mut trace = vec![self.criterion.evaluate(solver, &x)?];
        while x.iteration < failure_iter {
            solver.step(&mut x)?;
            trace.push(self.criterion.evaluate(solver, &x)?);
            if x.iteration == failure_iter {
                break;
            }
            for ((policy, ckpt), cursor) in policies.iter().zip(&mut checkpoints).zip(&mut cursors) {
                if policy.saves_at(x.iteration) {
                    let chosen = checkpoint::select_for_checkpoint(&x, ckpt, policy, metric, cursor, seed)?;
                    checkpoint::save_checkpoint(&x, ckpt, &chosen)?;
                }
            }
        }
        let state_at_t = x.clone();
        let max_iters = self.cfg.solver.max_iters;
        let mut converged = self.criterion.first_met(&trace);
        while converged.is_none() && x.iteration < max_iters {
            solver.step(&mut x)?;
            trace.push(self.criterion.evaluate(solver, &x)?);
            if self.criterion.is_met(*trace.last().expect("nonempty")) {
                converged = Some(trace.len() - 1);
            }
        }
        let converged = converged.ok_or_else(|| ScarError::NonConvergence {
            max_iters,
            trace: trace.clone(),
        })? as u64;
        Ok(Prefix {
            trace,
            converged,
            state_at_t,
            checkpoints,
        })
    }

    /// The iteration-cost bound applies to QP runs measured by distance.
    fn bound_profile(&self, prefix: &Prefix) -> Result<Option<ConvergenceProfile>> {
        if !self.cfg.bounds
            || self.cfg.solver.model != ModelKind::Qp
            || self.criterion.metric != CriterionMetric::DistanceToOptimum
        {
            return Ok(None);
        }
        let upto = (prefix.converged as usize + 1).min(prefix.trace.len());
        let c = bounds::estimate_c(&prefix.trace[..upto])?;
        Ok(Some(ConvergenceProfile::new(
            c,
            prefix.trace[0],
            self.criterion.threshold,
        )?))
    }

    fn recover_and_finish(
        &self,
        solver: &Solver<'_>,
        metric: &NormMetric,
        prefix: &Prefix,
        ckpt: &RunningCheckpoint,
        event: &FailureEvent,
        mode: RecoveryMode,
    ) -> Result<Outcome> {
        let t = event.iteration as usize;
        let recovered = checkpoint::recover(&prefix.state_at_t, ckpt, event, mode, metric, solver)?;
        let delta_norm = if self.criterion.metric == CriterionMetric::DistanceToOptimum {
            Some(diff_norm(
                &prefix.state_at_t,
                &recovered.state,
                &NormMetric::euclidean(),
            )?)
        } else {
            None
        };
        let bytes_restored = recovered.bytes_restored;
        // A baseline that converged before the failure is unaffected by it.
        if let Some(k) = self.criterion.first_met(&prefix.trace[..t]) {
            return Ok(Outcome {
                converged: Some(k as u64),
                delta_norm,
                bytes_restored,
                recovered: recovered.state,
            });
        }
        let mut y = recovered.state.clone();
        let max_iters = self.cfg.solver.max_iters;
        let mut converged = None;
        loop {
            match self.criterion.evaluate(solver, &y) {
                Ok(v) if self.criterion.is_met(v) => {
                    converged = Some(y.iteration);
                    break;
                }
                Ok(_) => {}
                Err(ScarError::Divergence { .. }) => break,
                Err(e) => return Err(e),
            }
            if y.iteration >= max_iters {
                break;
            }
            match solver.step(&mut y) {
                Ok(()) => {}
                Err(ScarError::Divergence { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(Outcome {
            converged,
            delta_norm,
            bytes_restored,
            recovered: recovered.state,
        })
    }
}

struct Outcome {
    converged: Option<u64>,
    delta_norm: Option<f64>,
    bytes_restored: u64,
    /// The state right after recovery, before any further step.
    recovered: ParameterState,
}

fn self_seeded(cfg: &SolverConfig, seed: u64) -> SolverConfig {
    SolverConfig { seed, ..cfg.clone() }
}

fn distinct_policies(cells: &[Cell]) -> Vec<CheckpointPolicy> {
    let mut out: Vec<CheckpointPolicy> = Vec::new();
    for c in cells {
        if !out.contains(&c.policy) {
            out.push(c.policy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qp_cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            "preset = \"qp\"\ntrials = 3\ncriterion.calibrate_iters = 60\nsolver.max_iters = 600\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn total_loss_with_full_recovery_replays_from_checkpoint() {
        let exp = Experiment::new(qp_cfg(
            "failure.fraction = 1.0\nrecovery = \"full\"\nfailure.geom_p = 0.03",
        ))
        .unwrap();
        for trial in 0..10 {
            let r = exp.run_trial(trial, None).unwrap();
            let t = r.failure_iter;
            let last_save = t - 1 - (t - 1) % 16;
            let baseline = r.converged_iter.unwrap() as i64 - r.rework_iters.unwrap();
            if baseline >= t as i64 {
                assert_eq!(r.rework_iters, Some((t - last_save) as i64), "T={t}");
            }
        }
    }

    #[test]
    fn trials_are_reproducible() {
        let exp = Experiment::new(qp_cfg("")).unwrap();
        assert_eq!(exp.run_trial(1, None).unwrap(), exp.run_trial(1, None).unwrap());
    }

    #[test]
    fn failure_after_convergence_costs_nothing() {
        let exp = Experiment::new(qp_cfg("failure.geom_p = 0.001")).unwrap();
        let mut seen = 0;
        for trial in 0..10 {
            let r = exp.run_trial(trial, None).unwrap();
            if r.failure_iter > r.converged_iter.unwrap() {
                assert_eq!(r.rework_iters, Some(0));
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn qp_trials_carry_a_bound() {
        let exp = Experiment::new(qp_cfg("")).unwrap();
        let r = exp.run_trial(2, None).unwrap();
        assert!(r.bound.unwrap() >= 0.0);
        let no_bounds = Experiment::new(qp_cfg("bounds = false")).unwrap();
        assert_eq!(no_bounds.run_trial(2, None).unwrap().bound, None);
    }
}

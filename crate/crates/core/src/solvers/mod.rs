//! Reference iterative-convergent trainers.
//!
//! Each model implements the update map `x(k+1) = f(x(k))`. Stochastic
//! choices are keyed on `(seed, iteration)` so a step is a pure function of
//! the state it is applied to.

pub mod lda;
pub mod mf;
pub mod mlr;
pub mod qp;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Result, ScarError};
use crate::params::{diff_norm, NormMetric, ParameterState};

/// Loss values above this are treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qp,
    Mlr,
    Mf,
    Lda,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Qp => "qp",
            ModelKind::Mlr => "mlr",
            ModelKind::Mf => "mf",
            ModelKind::Lda => "lda",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub model: ModelKind,
    /// Gradient step for QP and MLR.
    pub step_size: f64,
    /// Minibatch size for MLR.
    pub batch_size: usize,
    /// Latent factors for MF.
    pub factors: usize,
    /// Ridge penalty for MF, added to the reported loss.
    pub regularization: f64,
    pub topics: usize,
    pub dirichlet_alpha: f64,
    pub dirichlet_beta: f64,
    pub max_iters: u64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Qp,
            step_size: 0.1,
            batch_size: 100,
            factors: 5,
            regularization: 0.05,
            topics: 10,
            dirichlet_alpha: 1.0,
            dirichlet_beta: 1.0,
            max_iters: 1000,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ScarError::argument(msg.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.factors == 0 {
            return bad("factors must be at least 1");
        }
        if !(self.regularization >= 0.0) {
            return bad("regularization must be non-negative");
        }
        if self.topics < 2 {
            return bad("topics must be at least 2");
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_beta > 0.0) {
            return bad("dirichlet hyperparameters must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionMetric {
    /// Converged once the training loss drops below the threshold.
    LossThreshold,
    /// Converged once `||x - x*||` (Euclidean) drops below the threshold.
    DistanceToOptimum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCriterion {
    pub metric: CriterionMetric,
    pub threshold: f64,
    pub optimum: Option<ParameterState>,
}

impl ConvergenceCriterion {
    pub fn loss_below(threshold: f64) -> Self {
        Self {
            metric: CriterionMetric::LossThreshold,
            threshold,
            optimum: None,
        }
    }

    pub fn distance_below(threshold: f64, optimum: ParameterState) -> Self {
        Self {
            metric: CriterionMetric::DistanceToOptimum,
            threshold,
            optimum: Some(optimum),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metric == CriterionMetric::DistanceToOptimum && self.optimum.is_none() {
            return Err(ScarError::argument("distance-to-optimum criterion needs an optimum"));
        }
        if !self.threshold.is_finite() {
            return Err(ScarError::argument("criterion threshold must be finite"));
        }
        Ok(())
    }

    /// The tracked quantity for `state`: loss or distance to the optimum.
    pub fn evaluate(&self, solver: &Solver<'_>, state: &ParameterState) -> Result<f64> {
        match self.metric {
            CriterionMetric::LossThreshold => solver.loss(state),
            CriterionMetric::DistanceToOptimum => {
                let opt = self
                    .optimum
                    .as_ref()
                    .ok_or_else(|| ScarError::argument("criterion has no optimum"))?;
                diff_norm(state, opt, &NormMetric::euclidean())
            }
        }
    }

    pub fn is_met(&self, value: f64) -> bool {
        value < self.threshold
    }

    /// First index of `trace` meeting the criterion.
    pub fn first_met(&self, trace: &[f64]) -> Option<usize> {
        trace.iter().position(|v| self.is_met(*v))
    }
}

/// Re-derives auxiliary state after units were overwritten wholesale.
pub trait AuxRebuild {
    fn rebuild_aux(&self, state: &mut ParameterState) -> Result<()>;
}

/// Does nothing; for models without auxiliary state.
pub struct NoAux;

impl AuxRebuild for NoAux {
    fn rebuild_aux(&self, _state: &mut ParameterState) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug)]
enum Model<'a> {
    Qp(qp::Qp<'a>),
    Mlr(mlr::Mlr<'a>),
    Mf(mf::Mf<'a>),
    Lda(lda::Lda<'a>),
}

/// A trainer bound to its configuration and data.
#[derive(Debug)]
pub struct Solver<'a> {
    cfg: SolverConfig,
    data: &'a Dataset,
    model: Model<'a>,
}

impl<'a> Solver<'a> {
    pub fn new(cfg: SolverConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let model = match (cfg.model, data) {
            (ModelKind::Qp, Dataset::Qp(d)) => Model::Qp(qp::Qp::new(d)),
            (ModelKind::Mlr, Dataset::LabeledSparse(d)) => Model::Mlr(mlr::Mlr::new(d)?),
            (ModelKind::Mf, Dataset::Ratings(d)) => Model::Mf(mf::Mf::new(d)),
            (ModelKind::Lda, Dataset::Corpus(d)) => Model::Lda(lda::Lda::new(d)),
            (m, d) => {
                return Err(ScarError::argument(format!(
                    "model {} cannot train on a {} dataset",
                    m.name(),
                    d.kind_name()
                )))
            }
        };
        Ok(Self { cfg, data, model })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    /// The initial state `x(0)`.
    pub fn init(&self) -> Result<ParameterState> {
        match &self.model {
            Model::Qp(m) => m.init(),
            Model::Mlr(m) => m.init(),
            Model::Mf(m) => m.init(&self.cfg),
            Model::Lda(m) => m.init(&self.cfg),
        }
    }

    /// Advances `state` from iteration k to k+1 in place.
    pub fn step(&self, state: &mut ParameterState) -> Result<()> {
        self.check_state(state)?;
        match &self.model {
            Model::Qp(m) => m.step(state, &self.cfg),
            Model::Mlr(m) => m.step(state, &self.cfg),
            Model::Mf(m) => m.step(state, &self.cfg),
            Model::Lda(m) => m.step(state, &self.cfg)?,
        }
        state.iteration += 1;
        if let Some(bad) = state.units().iter().find(|u| u.values.iter().any(|v| !v.is_finite())) {
            return Err(ScarError::Divergence {
                iteration: state.iteration,
                reason: format!("non-finite value in unit {}", bad.unit_id),
            });
        }
        Ok(())
    }

    pub fn loss(&self, state: &ParameterState) -> Result<f64> {
        self.check_state(state)?;
        let value = match &self.model {
            Model::Qp(m) => m.loss(state),
            Model::Mlr(m) => m.loss(state),
            Model::Mf(m) => m.loss(state, &self.cfg),
            Model::Lda(m) => m.loss(state, &self.cfg)?,
        };
        if !value.is_finite() || value > DIVERGENCE_LOSS {
            return Err(ScarError::Divergence {
                iteration: state.iteration,
                reason: format!("loss is {value}"),
            });
        }
        Ok(value)
    }

    /// `x* = A^-1 b`; QP only.
    pub fn analytic_optimum(&self) -> Result<ParameterState> {
        match &self.model {
            Model::Qp(m) => m.optimum(),
            _ => Err(ScarError::argument("analytic optimum exists only for QP")),
        }
    }

    /// The norm perturbations of this model are measured in.
    pub fn norm_metric(&self) -> NormMetric {
        match &self.model {
            Model::Lda(m) => m.norm_metric(),
            _ => NormMetric::euclidean(),
        }
    }

    fn check_state(&self, state: &ParameterState) -> Result<()> {
        let expected = match &self.model {
            Model::Qp(m) => m.unit_count(),
            Model::Mlr(m) => m.unit_count(),
            Model::Mf(m) => m.unit_count(),
            Model::Lda(m) => m.unit_count(),
        };
        if state.len() != expected {
            return Err(ScarError::structural(format!(
                "state has {} units, model expects {expected}",
                state.len()
            )));
        }
        Ok(())
    }
}

impl AuxRebuild for Solver<'_> {
    fn rebuild_aux(&self, state: &mut ParameterState) -> Result<()> {
        match &self.model {
            Model::Lda(m) => m.rebuild(state, &self.cfg),
            _ => Ok(()),
        }
    }
}

/// One update `f(state)` as a pure function.
pub fn step(state: &ParameterState, cfg: &SolverConfig, data: &Dataset) -> Result<ParameterState> {
    let solver = Solver::new(cfg.clone(), data)?;
    let mut next = state.clone();
    solver.step(&mut next)?;
    Ok(next)
}

pub fn loss(state: &ParameterState, cfg: &SolverConfig, data: &Dataset) -> Result<f64> {
    Solver::new(cfg.clone(), data)?.loss(state)
}

pub fn analytic_optimum(cfg: &SolverConfig, data: &Dataset) -> Result<ParameterState> {
    Solver::new(cfg.clone(), data)?.analytic_optimum()
}

/// Recomputes LDA count tables and document distributions from the token
/// assignments held in `state`.
pub fn rebuild_aux(state: &ParameterState, cfg: &SolverConfig, data: &Dataset) -> Result<ParameterState> {
    if cfg.model != ModelKind::Lda {
        return Err(ScarError::argument("rebuild_aux applies to LDA only"));
    }
    let solver = Solver::new(cfg.clone(), data)?;
    let mut out = state.clone();
    solver.rebuild_aux(&mut out)?;
    Ok(out)
}

/// Runs `solver` from `start` until `criterion` holds or `max_iters` is
/// reached, returning the criterion value at every iteration including the
/// start.
pub fn run_to_convergence(
    solver: &Solver<'_>,
    start: ParameterState,
    criterion: &ConvergenceCriterion,
) -> Result<(ParameterState, Vec<f64>)> {
    let mut state = start;
    let mut trace = vec![criterion.evaluate(solver, &state)?];
    while !criterion.is_met(*trace.last().unwrap()) && state.iteration < solver.config().max_iters {
        solver.step(&mut state)?;
        trace.push(criterion.evaluate(solver, &state)?);
    }
    Ok((state, trace))
}

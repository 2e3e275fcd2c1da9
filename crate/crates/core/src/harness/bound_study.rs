//! Measured iteration cost of injected perturbations against the
//! contraction bound, on QP runs measured by distance to the optimum.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::PerturbationMode;
use super::trial::Experiment;
use crate::bounds::{self, ConvergenceProfile};
use crate::error::{Result, ScarError};
use crate::params::{NormMetric, ParameterState};
use crate::perturb::{self, Perturbation, PerturbationKind, PerturbationLedger};
use crate::rng::{self, Stream};
use crate::solvers::{CriterionMetric, ModelKind, Solver};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub trial: usize,
    pub seed: u64,
    pub mode: &'static str,
    /// Perturbation size relative to the distance at the perturbed iteration.
    pub scale: f64,
    pub perturbations: usize,
    /// Sum of the injected norms.
    pub delta_norm: f64,
    pub delta_t: f64,
    pub measured_cost: Option<i64>,
    pub bound: f64,
    pub violated: bool,
    pub converged_iter: Option<u64>,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: &'static str,
    pub trials: usize,
    pub censored: usize,
    pub violations: usize,
    /// Violations over uncensored trials.
    pub violation_rate: f64,
    pub mean_cost: f64,
    pub max_cost: Option<i64>,
    pub max_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSummary {
    pub name: String,
    pub trials: usize,
    pub base_seed: u64,
    pub c: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub initial_distance: f64,
    pub baseline_converged: u64,
    /// Iteration of single perturbations.
    pub perturb_at: u64,
    pub modes: Vec<ModeSummary>,
}

#[derive(Debug, Clone)]
pub struct BoundStudy {
    pub rows: Vec<BoundRow>,
    pub summary: BoundSummary,
}

/// The unperturbed run shared by every trial; QP descent from `x(0) = 0`
/// does not depend on the trial seed.
pub struct Baseline {
    pub states: Vec<ParameterState>,
    pub trace: Vec<f64>,
    pub converged: u64,
    pub profile: ConvergenceProfile,
    pub perturb_at: u64,
}

struct Runner<'e> {
    exp: &'e Experiment,
    solver: Solver<'e>,
    metric: NormMetric,
    optimum: ParameterState,
    base: Baseline,
}

impl<'e> Runner<'e> {
    fn new(exp: &'e Experiment) -> Result<Self> {
        if exp.cfg.solver.model != ModelKind::Qp || exp.criterion.metric != CriterionMetric::DistanceToOptimum {
            return Err(ScarError::Config(
                "bound studies need model = qp and criterion.metric = distance_to_optimum".into(),
            ));
        }
        let solver = exp.solver(exp.cfg.base_seed)?;
        let metric = NormMetric::euclidean();
        let optimum = exp.criterion.optimum.clone().expect("distance criterion carries x*");
        let base = baseline(exp, &solver)?;
        Ok(Self {
            exp,
            solver,
            metric,
            optimum,
            base,
        })
    }

    fn distance(&self, y: &ParameterState) -> Result<f64> {
        self.exp.criterion.evaluate(&self.solver, y)
    }

    fn trial(&self, trial: usize, mode: PerturbationMode) -> Result<BoundRow> {
        let seed = self.exp.seed(trial);
        let spec = &self.exp.cfg.perturbation;
        let (lo, hi) = (spec.scale_min.ln(), spec.scale_max.ln());
        let scale = (lo + (hi - lo) * rng::keyed(seed, Stream::Schedule, 0).random::<f64>()).exp();
        self.trial_with(trial, seed, mode, scale)
    }

    /// One perturbed run. `scale = 0` injects nothing in the Gaussian,
    /// adversarial and Bernoulli modes.
    fn trial_with(&self, trial: usize, seed: u64, mode: PerturbationMode, scale: f64) -> Result<BoundRow> {
        let t = self.base.perturb_at;
        let c = self.base.profile.c();
        let max_iters = self.exp.cfg.solver.max_iters;
        let mut ledger = PerturbationLedger::new(c);
        let mut y: ParameterState;
        if mode == PerturbationMode::Bernoulli {
            y = self.base.states[0].clone();
        } else {
            let x_t = &self.base.states[t as usize];
            let magnitude = scale * self.base.trace[t as usize];
            let (after, p) = match mode {
                _ if scale == 0.0 && mode != PerturbationMode::Reset => (
                    x_t.clone(),
                    Perturbation::between(PerturbationKind::Gaussian, x_t, x_t, &self.metric)?,
                ),
                PerturbationMode::Gaussian => {
                    let per_coord = magnitude / (x_t.dim() as f64).sqrt();
                    perturb::inject_gaussian(x_t, per_coord, seed, &self.metric)?
                }
                PerturbationMode::Adversarial => {
                    perturb::inject_adversarial(x_t, &self.optimum, magnitude, &self.metric)?
                }
                PerturbationMode::Reset => {
                    let (after, p, _) = perturb::inject_reset(
                        x_t,
                        &self.base.states[0],
                        self.exp.cfg.perturbation.fraction,
                        seed,
                        &self.metric,
                        &self.solver,
                    )?;
                    (after, p)
                }
                PerturbationMode::Bernoulli => unreachable!("handled above"),
            };
            if p.recorded_norm > 0.0 {
                ledger.insert(p)?;
            }
            y = after;
        }
        let bernoulli_p = self.exp.cfg.perturbation.bernoulli_p;
        let mut converged = None;
        loop {
            let d = self.distance(&y)?;
            if self.exp.criterion.is_met(d) {
                converged = Some(y.iteration);
                break;
            }
            if y.iteration >= max_iters || !d.is_finite() {
                break;
            }
            if mode == PerturbationMode::Bernoulli
                && scale > 0.0
                && rng::keyed(seed, Stream::Schedule, y.iteration + 1).random::<f64>() < bernoulli_p
            {
                let per_coord = scale * d / (y.dim() as f64).sqrt();
                let (after, p) = perturb::inject_gaussian(&y, per_coord, seed, &self.metric)?;
                ledger.insert(p)?;
                y = after;
            }
            self.solver.step(&mut y)?;
        }
        let delta_t = bounds::delta_t(&ledger)?;
        let bound = bounds::cost_bound(&self.base.profile, &ledger)?;
        let measured_cost = converged.map(|k| k as i64 - self.base.converged as i64);
        Ok(BoundRow {
            trial,
            seed,
            mode: mode.name(),
            scale,
            perturbations: ledger.entries().len(),
            delta_norm: ledger.entries().iter().map(|e| e.recorded_norm).sum(),
            delta_t,
            measured_cost,
            bound,
            violated: measured_cost.is_some_and(|m| m as f64 > bound),
            converged_iter: converged,
            censored: converged.is_none(),
        })
    }
}

/// Runs the unperturbed baseline to convergence and derives its profile:
/// `c` from the trace, `D0 = ||x(0) - x*||`, `eps` from the criterion.
pub fn baseline(exp: &Experiment, solver: &Solver<'_>) -> Result<Baseline> {
    let max_iters = exp.cfg.solver.max_iters;
    let mut x = solver.init()?;
    let mut states = vec![x.clone()];
    let mut trace = vec![exp.criterion.evaluate(solver, &x)?];
    while !exp.criterion.is_met(*trace.last().expect("nonempty")) {
        if x.iteration >= max_iters {
            return Err(ScarError::NonConvergence { max_iters, trace });
        }
        solver.step(&mut x)?;
        trace.push(exp.criterion.evaluate(solver, &x)?);
        states.push(x.clone());
    }
    let converged = x.iteration;
    let c = bounds::estimate_c(&trace)?;
    let profile = ConvergenceProfile::new(c, trace[0], exp.criterion.threshold)?;
    let perturb_at = exp
        .cfg
        .perturbation
        .iteration
        .unwrap_or_else(|| exp.cfg.criterion.calibrate_iters.unwrap_or(converged) / 2);
    if perturb_at >= converged {
        return Err(ScarError::Config(format!(
            "perturbation.iteration {perturb_at} is not before baseline convergence at {converged}"
        )));
    }
    Ok(Baseline {
        states,
        trace,
        converged,
        profile,
        perturb_at,
    })
}

/// Every configured mode for every trial; rows are ordered by mode, then
/// trial.
pub fn run_bound_study(exp: &Experiment, parallel: usize) -> Result<BoundStudy> {
    let runner = Runner::new(exp)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| ScarError::Config(e.to_string()))?;
    let modes = exp.cfg.perturbation.modes.clone();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for mode in modes {
        let mode_rows: Vec<BoundRow> = pool.install(|| {
            (0..exp.cfg.trials)
                .into_par_iter()
                .map(|t| runner.trial(t, mode))
                .collect::<Result<_>>()
        })?;
        summaries.push(summarize_mode(mode, &mode_rows));
        rows.extend(mode_rows);
    }
    let profile = &runner.base.profile;
    Ok(BoundStudy {
        rows,
        summary: BoundSummary {
            name: exp.cfg.name.clone(),
            trials: exp.cfg.trials,
            base_seed: exp.cfg.base_seed,
            c: profile.c(),
            kappa: bounds::kappa(profile),
            epsilon: profile.epsilon(),
            initial_distance: profile.initial_distance(),
            baseline_converged: runner.base.converged,
            perturb_at: runner.base.perturb_at,
            modes: summaries,
        },
    })
}

fn summarize_mode(mode: PerturbationMode, rows: &[BoundRow]) -> ModeSummary {
    let costs: Vec<i64> = rows.iter().filter_map(|r| r.measured_cost).collect();
    let violations = rows.iter().filter(|r| r.violated).count();
    ModeSummary {
        mode: mode.name(),
        trials: rows.len(),
        censored: rows.len() - costs.len(),
        violations,
        violation_rate: if costs.is_empty() {
            0.0
        } else {
            violations as f64 / costs.len() as f64
        },
        mean_cost: costs.iter().sum::<i64>() as f64 / costs.len().max(1) as f64,
        max_cost: costs.iter().copied().max(),
        max_bound: rows.iter().map(|r| r.bound).fold(0.0, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;

    fn exp(extra: &str) -> Experiment {
        let trials = if extra.contains("trials") { "" } else { "trials = 40\n" };
        let cfg = ExperimentConfig::from_toml_str(&format!("preset = \"qp\"\n{trials}{extra}")).unwrap();
        Experiment::new(cfg).unwrap()
    }

    #[test]
    fn zero_magnitude_costs_nothing_and_bounds_nothing() {
        let e = exp("");
        let runner = Runner::new(&e).unwrap();
        for mode in [
            PerturbationMode::Gaussian,
            PerturbationMode::Adversarial,
            PerturbationMode::Bernoulli,
        ] {
            let row = runner.trial_with(0, 0, mode, 0.0).unwrap();
            assert_eq!(row.measured_cost, Some(0), "{mode:?}");
            assert_eq!(row.bound, 0.0);
            assert_eq!(row.perturbations, 0);
        }
    }

    #[test]
    fn bound_holds_for_single_gaussian_perturbations() {
        let study = run_bound_study(&exp("perturbation.modes = [\"gaussian\"]"), 2).unwrap();
        let s = &study.summary.modes[0];
        assert_eq!(s.censored, 0);
        assert!(s.violation_rate <= 0.05, "{s:?}");
        assert!(study.rows.iter().all(|r| r.perturbations == 1 && r.delta_norm > 0.0));
    }

    #[test]
    fn adversarial_costs_more_than_gaussian_at_equal_scale() {
        let study = run_bound_study(&exp(""), 2).unwrap();
        let mean = |m: &str| {
            let rows: Vec<_> = study.rows.iter().filter(|r| r.mode == m).collect();
            rows.iter().map(|r| r.measured_cost.unwrap() as f64).sum::<f64>() / rows.len() as f64
        };
        assert!(mean("adversarial") > mean("gaussian"));
    }

    #[test]
    fn reset_and_bernoulli_modes_run() {
        let study = run_bound_study(
            &exp("trials = 5\nperturbation.modes = [\"reset\", \"bernoulli\"]\nperturbation.bernoulli_p = 0.005"),
            1,
        )
        .unwrap();
        let reset: Vec<_> = study.rows.iter().filter(|r| r.mode == "reset").collect();
        // Resetting the single QP unit restores x(0), costing exactly t.
        let t = study.summary.perturb_at as i64;
        assert!(reset.iter().all(|r| r.measured_cost == Some(t)));
        assert!(study.rows.iter().any(|r| r.mode == "bernoulli" && r.perturbations > 0));
    }

    #[test]
    fn non_qp_configs_are_rejected() {
        let cfg = ExperimentConfig::from_toml_str("preset = \"mf\"\ntrials = 2").unwrap();
        let e = Experiment::new(cfg).unwrap();
        assert!(matches!(run_bound_study(&e, 1), Err(ScarError::Config(_))));
    }
}

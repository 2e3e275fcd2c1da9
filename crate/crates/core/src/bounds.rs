//! Iteration-cost bounds for perturbed linearly convergent iterations.
//!
//! With contraction `c`, initial distance `D0 = ||x(0) - x*||` and target
//! `eps`, an unperturbed run needs `kappa = ln(D0/eps) / ln(1/c)` iterations.
//! Perturbations `delta_l` cost at most `ln(1 + Delta_T/D0) / ln(1/c)` extra
//! iterations, where `Delta_T = sum_l c^-l ||delta_l||`.

use crate::error::{Result, ScarError};
use crate::perturb::PerturbationLedger;
use crate::solvers::ConvergenceCriterion;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceProfile {
    c: f64,
    initial_distance: f64,
    epsilon: f64,
}

impl ConvergenceProfile {
    pub fn new(c: f64, initial_distance: f64, epsilon: f64) -> Result<Self> {
        check_contraction(c)?;
        if !(initial_distance > 0.0 && initial_distance.is_finite()) {
            return Err(ScarError::argument("initial distance must be positive"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(ScarError::argument("epsilon must be positive"));
        }
        Ok(Self {
            c,
            initial_distance,
            epsilon,
        })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn initial_distance(&self) -> f64 {
        self.initial_distance
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn log_inv_c(&self) -> f64 {
        -self.c.ln()
    }
}

fn check_contraction(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(ScarError::argument(format!(
            "contraction factor {c} must lie in (0, 1)"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub kappa_unperturbed: f64,
    pub delta_t: f64,
    pub bound: f64,
    pub measured_cost: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedNoiseProfile {
    delta: f64,
}

impl BoundedNoiseProfile {
    pub fn new(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta.is_finite() {
            Ok(Self { delta })
        } else {
            Err(ScarError::argument("per-iteration noise bound must be positive"))
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Result of the bounded-noise calculation. Bounds are `+inf` when the
/// target or the start lies inside the noise floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfiniteBound {
    pub floor: f64,
    pub iteration_bound: f64,
    pub cost_bound: f64,
}

/// Step sizes `alpha_k = a0 / k` with gradient norm bound `G`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdRateSchedule {
    a0: f64,
    g: f64,
}

impl SgdRateSchedule {
    pub fn new(a0: f64, g: f64) -> Result<Self> {
        if !(a0 > 0.0 && a0 <= 1.0) {
            return Err(ScarError::argument("a0 must lie in (0, 1]"));
        }
        if !(g >= 0.0 && g.is_finite()) {
            return Err(ScarError::argument("gradient bound must be non-negative"));
        }
        Ok(Self { a0, g })
    }

    pub fn alpha(&self, k: u64) -> f64 {
        self.a0 / k as f64
    }

    /// Smallest `k >= 1` with `alpha_k < 1`.
    pub fn k0(&self) -> u64 {
        if self.a0 < 1.0 {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgdBound {
    Iterations(u64),
    /// No `k` up to the search limit satisfies the inequality.
    Saturated {
        limit: u64,
    },
}

/// Worst per-step ratio of a distance trace.
///
/// Entries below `10 * f64::EPSILON * trace[0]` are rounding noise and end
/// the trace. Fails when at least 20% of the remaining steps do not contract.
pub fn estimate_c(trace: &[f64]) -> Result<f64> {
    if trace.len() < 3 {
        return Err(ScarError::Estimation("need at least 3 distances".into()));
    }
    if trace.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(ScarError::Estimation("distances must be positive and finite".into()));
    }
    let cutoff = 10.0 * f64::EPSILON * trace[0];
    let usable = trace.iter().take_while(|d| **d >= cutoff).count();
    if usable < 3 {
        return Err(ScarError::Estimation("trace reaches the optimum too quickly".into()));
    }
    let ratios: Vec<f64> = trace[..usable].windows(2).map(|w| w[1] / w[0]).collect();
    let stalled = ratios.iter().filter(|r| **r >= 1.0).count();
    if stalled as f64 >= 0.2 * ratios.len() as f64 {
        return Err(ScarError::Estimation(format!(
            "{stalled} of {} steps do not contract; convergence is not linear, \
             run measurement-only experiments instead",
            ratios.len()
        )));
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    Ok(worst.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

pub fn kappa(profile: &ConvergenceProfile) -> f64 {
    (profile.initial_distance / profile.epsilon).ln() / profile.log_inv_c()
}

pub fn delta_t(ledger: &PerturbationLedger) -> Result<f64> {
    check_contraction(ledger.contraction)?;
    Ok(ledger
        .entries()
        .iter()
        .map(|e| ledger.contraction.powf(-(e.iteration as f64)) * e.recorded_norm)
        .sum())
}

pub fn cost_bound(profile: &ConvergenceProfile, ledger: &PerturbationLedger) -> Result<f64> {
    if ledger.contraction != profile.c {
        return Err(ScarError::argument(
            "ledger and profile use different contraction factors",
        ));
    }
    let d = delta_t(ledger)?;
    Ok((d / profile.initial_distance).ln_1p() / profile.log_inv_c())
}

pub fn cost_report(
    profile: &ConvergenceProfile,
    ledger: &PerturbationLedger,
    measured_cost: Option<i64>,
) -> Result<CostReport> {
    Ok(CostReport {
        kappa_unperturbed: kappa(profile),
        delta_t: delta_t(ledger)?,
        bound: cost_bound(profile, ledger)?,
        measured_cost,
    })
}

/// Upper envelope on `E||y(k+1) - x*||`:
/// `c^(k+1) [D0 + sum_{l<=k} c^-l ||delta_l||]`.
pub fn distance_envelope(c: f64, initial_distance: f64, ledger: &PerturbationLedger, k: u64) -> Result<f64> {
    check_contraction(c)?;
    let mass: f64 = ledger
        .entries()
        .iter()
        .take_while(|e| e.iteration <= k)
        .map(|e| c.powf(-(e.iteration as f64)) * e.recorded_norm)
        .sum();
    Ok(c.powf((k + 1) as f64) * (initial_distance + mass))
}

pub fn infinite_bound(profile: &ConvergenceProfile, noise: &BoundedNoiseProfile) -> InfiniteBound {
    let c = profile.c;
    let floor = c / (1.0 - c) * noise.delta;
    let (d0, eps) = (profile.initial_distance, profile.epsilon);
    if eps <= floor || d0 <= floor {
        return InfiniteBound {
            floor,
            iteration_bound: f64::INFINITY,
            cost_bound: f64::INFINITY,
        };
    }
    InfiniteBound {
        floor,
        iteration_bound: ((d0 - floor) / (eps - floor)).ln() / profile.log_inv_c(),
        cost_bound: ((1.0 - floor / d0) / (1.0 - floor / eps)).ln() / profile.log_inv_c(),
    }
}

/// Smallest `k` with
/// `a_k [D0^2 + sum_{l=k0..k} a_l^-1 (||delta_l||^2 + alpha_l^2 G^2)] < eps^2`,
/// where `a_k = prod_{i=k0..k} (1 - alpha_i)`. Ledger norms are read as root
/// mean squares. Entries before `k0` are charged with `a_l = 1`.
///
/// The left side is not monotone in `k` once `G > 0`, so the search is a
/// linear scan from `k0 - 1` up to `limit`.
pub fn sgd_bound(
    schedule: &SgdRateSchedule,
    ledger: &PerturbationLedger,
    initial_distance: f64,
    epsilon: f64,
    limit: u64,
) -> Result<SgdBound> {
    if !(initial_distance >= 0.0 && epsilon > 0.0) {
        return Err(ScarError::argument("need initial_distance >= 0 and epsilon > 0"));
    }
    let k0 = schedule.k0();
    let target = epsilon * epsilon;
    let entries = ledger.entries();
    let mut next = 0;
    let mut mass = initial_distance * initial_distance;
    while next < entries.len() && entries[next].iteration < k0 {
        mass += entries[next].recorded_norm.powi(2);
        next += 1;
    }
    if mass < target {
        return Ok(SgdBound::Iterations(k0 - 1));
    }
    let g2 = schedule.g * schedule.g;
    let mut a = 1.0;
    for k in k0..=limit {
        let alpha = schedule.alpha(k);
        a *= 1.0 - alpha;
        let mut charge = alpha * alpha * g2;
        if next < entries.len() && entries[next].iteration == k {
            charge += entries[next].recorded_norm.powi(2);
            next += 1;
        }
        mass += charge / a;
        if a * mass < target {
            return Ok(SgdBound::Iterations(k));
        }
    }
    Ok(SgdBound::Saturated { limit })
}

/// Iterations the perturbed run needs beyond the baseline to meet
/// `criterion`. Traces are indexed by iteration.
pub fn measure_cost(baseline: &[f64], perturbed: &[f64], criterion: &ConvergenceCriterion) -> Result<i64> {
    let first = |trace: &[f64]| {
        criterion.first_met(trace).ok_or_else(|| ScarError::NonConvergence {
            max_iters: trace.len().saturating_sub(1) as u64,
            trace: trace.to_vec(),
        })
    };
    Ok(first(perturbed)? as i64 - first(baseline)? as i64)
}

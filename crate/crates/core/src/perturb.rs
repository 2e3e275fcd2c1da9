//! Perturbation injectors and the ledger that aggregates them.
//!
//! Every injector returns the perturbed state together with a
//! [`Perturbation`] whose `recorded_norm` is `diff_norm(before, after)` under
//! the run's metric.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, ScarError};
use crate::params::{diff_norm, Aux, NormMetric, ParameterState};
use crate::rng::{self, Stream};
use crate::solvers::AuxRebuild;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    Gaussian,
    Adversarial,
    Reset,
    Rounding,
    Recovery,
    /// A norm supplied directly, with no state attached.
    Recorded,
}

/// `after - before` for one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDelta {
    pub unit_id: u64,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub iteration: u64,
    pub kind: PerturbationKind,
    /// Units that changed; units absent here are bitwise untouched.
    pub deltas: Vec<UnitDelta>,
    pub recorded_norm: f64,
}

impl Perturbation {
    /// Builds the entry for `before -> after`, measuring with `metric`.
    pub fn between(
        kind: PerturbationKind,
        before: &ParameterState,
        after: &ParameterState,
        metric: &NormMetric,
    ) -> Result<Self> {
        let recorded_norm = diff_norm(before, after, metric)?;
        let deltas = before
            .units()
            .iter()
            .zip(after.units())
            .filter(|(a, b)| a.values != b.values)
            .map(|(a, b)| UnitDelta {
                unit_id: a.unit_id,
                delta: a.values.iter().zip(&b.values).map(|(x, y)| y - x).collect(),
            })
            .collect();
        Ok(Self {
            iteration: before.iteration,
            kind,
            deltas,
            recorded_norm,
        })
    }

    /// An entry carrying only a norm, for bound calculations.
    pub fn recorded(iteration: u64, norm: f64) -> Self {
        Self {
            iteration,
            kind: PerturbationKind::Recorded,
            deltas: Vec::new(),
            recorded_norm: norm,
        }
    }
}

/// Perturbations of one run, strictly increasing in iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationLedger {
    entries: Vec<Perturbation>,
    pub contraction: f64,
}

impl PerturbationLedger {
    pub fn new(contraction: f64) -> Self {
        Self {
            entries: Vec::new(),
            contraction,
        }
    }

    pub fn entries(&self) -> &[Perturbation] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts at the position given by its iteration. Two entries at the
    /// same iteration are rejected.
    pub fn insert(&mut self, p: Perturbation) -> Result<()> {
        match self.entries.binary_search_by_key(&p.iteration, |e| e.iteration) {
            Ok(_) => Err(ScarError::argument(format!(
                "ledger already holds a perturbation at iteration {}",
                p.iteration
            ))),
            Err(pos) => {
                self.entries.insert(pos, p);
                Ok(())
            }
        }
    }

    pub fn from_norms(contraction: f64, norms: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let mut ledger = Self::new(contraction);
        for (k, v) in norms {
            ledger.insert(Perturbation::recorded(k, v))?;
        }
        Ok(ledger)
    }
}

/// A uniform `count`-subset of `ids`.
pub fn sample_units(ids: &[u64], count: usize, rng: &mut impl Rng) -> BTreeSet<u64> {
    index::sample(rng, ids.len(), count.min(ids.len()))
        .into_iter()
        .map(|i| ids[i])
        .collect()
}

/// `ceil(fraction * n)`, at least 1 for a positive fraction.
pub fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1))
}

pub fn inject_gaussian(
    state: &ParameterState,
    scale: f64,
    seed: u64,
    metric: &NormMetric,
) -> Result<(ParameterState, Perturbation)> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(ScarError::argument("gaussian scale must be positive"));
    }
    let mut rng = rng::keyed(seed, Stream::Perturbation, state.iteration);
    let after = state.map_values(|v| v + scale * rng.sample::<f64, _>(StandardNormal));
    let p = Perturbation::between(PerturbationKind::Gaussian, state, &after, metric)?;
    Ok((after, p))
}

/// Moves `state` a Euclidean distance `magnitude` further from `optimum`
/// along the ray through both.
pub fn inject_adversarial(
    state: &ParameterState,
    optimum: &ParameterState,
    magnitude: f64,
    metric: &NormMetric,
) -> Result<(ParameterState, Perturbation)> {
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(ScarError::argument("adversarial magnitude must be non-negative"));
    }
    let dist = diff_norm(state, optimum, &NormMetric::euclidean())?;
    if dist == 0.0 {
        return Err(ScarError::argument(
            "state equals the optimum; no direction away from it",
        ));
    }
    if magnitude == 0.0 {
        return Ok((
            state.clone(),
            Perturbation::between(PerturbationKind::Adversarial, state, state, metric)?,
        ));
    }
    let mut after = state.clone();
    let scale = magnitude / dist;
    for pos in 0..state.len() {
        let away = optimum.values(pos);
        for (v, o) in after.values_mut(pos).iter_mut().zip(away) {
            *v += scale * (*v - o);
        }
    }
    let p = Perturbation::between(PerturbationKind::Adversarial, state, &after, metric)?;
    Ok((after, p))
}

/// Resets a uniform `ceil(fraction * n)`-subset of units to `initial`. For
/// LDA the documents' token assignments are reset too and `rebuild` rederives
/// the count tables.
pub fn inject_reset(
    state: &ParameterState,
    initial: &ParameterState,
    fraction: f64,
    seed: u64,
    metric: &NormMetric,
    rebuild: &dyn AuxRebuild,
) -> Result<(ParameterState, Perturbation, BTreeSet<u64>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ScarError::argument("reset fraction must lie in (0, 1]"));
    }
    state.check_same_shape(initial)?;
    let ids: Vec<u64> = state.unit_ids().collect();
    let mut rng = rng::keyed(seed, Stream::LostSet, state.iteration);
    let lost = sample_units(&ids, fraction_count(fraction, ids.len()), &mut rng);
    let after = reset_units(state, initial, &lost, rebuild)?;
    let p = Perturbation::between(PerturbationKind::Reset, state, &after, metric)?;
    Ok((after, p, lost))
}

/// Copies the units in `subset` (and their LDA assignments) from `source`.
pub(crate) fn reset_units(
    state: &ParameterState,
    source: &ParameterState,
    subset: &BTreeSet<u64>,
    rebuild: &dyn AuxRebuild,
) -> Result<ParameterState> {
    let mut after = state.clone();
    for &id in subset {
        let pos = state
            .position(id)
            .ok_or_else(|| ScarError::structural(format!("unknown unit {id}")))?;
        after.set_values(pos, source.values(pos))?;
    }
    if let Aux::Lda(aux) = &mut after.aux {
        let src = source
            .aux
            .as_lda()
            .ok_or_else(|| ScarError::structural("reset source has no token assignments"))?;
        for &id in subset {
            let pos = state.position(id).expect("checked above");
            aux.assignments[pos] = src.assignments[pos].clone();
        }
        rebuild.rebuild_aux(&mut after)?;
    }
    Ok(after)
}

/// Rounds `x` to `bits` stored mantissa bits, ties to even.
pub fn round_mantissa(x: f64, bits: u32) -> f64 {
    if !x.is_finite() || bits >= 52 {
        return x;
    }
    let shift = 52 - bits;
    let raw = x.to_bits();
    let mask = (1u64 << shift) - 1;
    let half = 1u64 << (shift - 1);
    let low = raw & mask;
    let mut kept = raw & !mask;
    let odd = (kept >> shift) & 1 == 1;
    if low > half || (low == half && odd) {
        // A carry out of the mantissa correctly bumps the exponent.
        kept += 1u64 << shift;
    }
    f64::from_bits(kept)
}

pub fn inject_rounding(
    state: &ParameterState,
    mantissa_bits: u32,
    metric: &NormMetric,
) -> Result<(ParameterState, Perturbation)> {
    if !(1..=52).contains(&mantissa_bits) {
        return Err(ScarError::argument("mantissa bits must lie in 1..=52"));
    }
    let after = state.map_values(|v| round_mantissa(v, mantissa_bits));
    let p = Perturbation::between(PerturbationKind::Rounding, state, &after, metric)?;
    Ok((after, p))
}

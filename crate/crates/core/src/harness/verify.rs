//! Monte Carlo checks of the recovery identities and of the perturbed
//! distance envelope.
//!
//! * partial recovery never perturbs more than full recovery:
//!   `||z_S - x_S|| <= ||z - x||`;
//! * for a uniform lost set of fraction `p`,
//!   `E ||z_S - x_S||^2 = p ||z - x||^2`;
//! * on a QP with known contraction `c`, the mean perturbed distance stays
//!   under `c^(k+1) [D0 + sum c^-l ||delta_l||]`.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bounds;
use crate::checkpoint::log::LogSink;
use crate::checkpoint::{self, FailureEvent, RecoveryMode, RunningCheckpoint};
use crate::datagen::{gen_qp, Dataset};
use crate::error::Result;
use crate::params::{diff_norm, NormMetric, ParameterState, ParameterUnit, UnitGroup};
use crate::perturb::{fraction_count, sample_units, PerturbationLedger};
use crate::rng::{self, Stream};
use crate::solvers::{qp, ModelKind, NoAux, Solver, SolverConfig};

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: &'static str,
    pub parameter: f64,
    pub samples: usize,
    pub value: f64,
    pub target: f64,
    pub passed: bool,
}

fn random_state(rng: &mut ChaCha8Rng, units: usize, dims: &[usize], scale: f64) -> Result<ParameterState> {
    let units = (0..units)
        .map(|i| {
            let values = (0..dims[i])
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            ParameterUnit::new(i as u64, UnitGroup::MlrRow, values)
        })
        .collect();
    ParameterState::new(0, units)
}

/// `||delta'||` and `||delta||` for checkpoint `z`, live state `x` and lost
/// set `lost`, both obtained through [`checkpoint::recover`].
fn recovery_norms(z: &ParameterState, x: &ParameterState, lost: BTreeSet<u64>) -> Result<(f64, f64)> {
    let ckpt = RunningCheckpoint::initialize(z, LogSink::memory(), None)?;
    let event = FailureEvent::new(x.iteration, lost, x.len())?;
    let metric = NormMetric::euclidean();
    let partial = checkpoint::recover(x, &ckpt, &event, RecoveryMode::Partial, &metric, &NoAux)?;
    let full = checkpoint::recover(x, &ckpt, &event, RecoveryMode::Full, &metric, &NoAux)?;
    Ok((partial.perturbation.recorded_norm, full.perturbation.recorded_norm))
}

/// Random `(z, x, S)` with 1 to 32 units of 1 to 6 values and magnitudes
/// spanning six decades. Passes when every case has
/// `||delta'|| <= ||delta|| (1 + 1e-12)`.
pub fn partial_never_exceeds_full(cases: usize, seed: u64) -> Result<CheckRow> {
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for case in 0..cases {
        let mut rng = rng::keyed(seed, Stream::Data, case as u64);
        let n = rng.random_range(1..=32);
        let dims: Vec<usize> = (0..n).map(|_| rng.random_range(1..=6)).collect();
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let z = random_state(&mut rng, n, &dims, scale)?;
        let x = random_state(&mut rng, n, &dims, scale)?;
        let ids: Vec<u64> = (0..n as u64).collect();
        let size = rng.random_range(1..=n);
        let lost = sample_units(&ids, size, &mut rng);
        let (partial, full) = recovery_norms(&z, &x, lost)?;
        if partial > full * (1.0 + 1e-12) {
            failures += 1;
        }
        if full > 0.0 {
            worst = worst.max(partial / full);
        }
    }
    Ok(CheckRow {
        check: "partial_le_full",
        parameter: f64::NAN,
        samples: cases,
        value: worst,
        target: 1.0,
        passed: failures == 0,
    })
}

/// Mean of `||delta'||^2 / ||delta||^2` over `samples` uniform lost sets of
/// `ceil(p * units)` units, each against fresh `(z, x)`. Passes within
/// `tolerance` relative error of `p`.
pub fn expected_partial_mass(p: f64, units: usize, samples: usize, tolerance: f64, seed: u64) -> Result<CheckRow> {
    let ids: Vec<u64> = (0..units as u64).collect();
    let dims = vec![3; units];
    let mut sum = 0.0;
    for s in 0..samples {
        let mut rng = rng::keyed(seed, Stream::LostSet, s as u64);
        let z = random_state(&mut rng, units, &dims, 1.0)?;
        let x = random_state(&mut rng, units, &dims, 1.0)?;
        let lost = sample_units(&ids, fraction_count(p, units), &mut rng);
        let (partial, full) = recovery_norms(&z, &x, lost)?;
        sum += (partial / full).powi(2);
    }
    let mean = sum / samples as f64;
    Ok(CheckRow {
        check: "expected_partial_mass",
        parameter: p,
        samples,
        value: mean,
        target: p,
        passed: ((mean - p) / p).abs() < tolerance,
    })
}

/// Per-iteration comparison of the mean perturbed distance with the
/// envelope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopePoint {
    pub iteration: u64,
    pub mean_distance: f64,
    pub envelope: f64,
}

/// Gradient descent on a `dim`-dimensional QP of the given condition number,
/// from `x(0) = 0` with step `step`, perturbed by `schedule` (iteration,
/// norm relative to `D0`) in a fresh uniformly random direction per seed.
/// Returns one point per iteration `k` for the distance of `y(k+1)`.
pub fn distance_envelope_check(
    dim: usize,
    condition: f64,
    step: f64,
    schedule: &[(u64, f64)],
    seeds: usize,
    iters: u64,
) -> Result<Vec<EnvelopePoint>> {
    let data = gen_qp(dim, condition, 0)?;
    let Dataset::Qp(spec) = &data else {
        unreachable!("gen_qp builds a QP")
    };
    let cfg = SolverConfig {
        model: ModelKind::Qp,
        step_size: step,
        max_iters: iters + 1,
        ..SolverConfig::default()
    };
    let solver = Solver::new(cfg, &data)?;
    let optimum = solver.analytic_optimum()?;
    let metric = NormMetric::euclidean();
    let x0 = solver.init()?;
    let d0 = diff_norm(&x0, &optimum, &metric)?;
    let c = qp::gd_contraction(spec, step);
    let ledger = PerturbationLedger::from_norms(c, schedule.iter().map(|&(k, v)| (k, v * d0)))?;

    let mut sums = vec![0.0; iters as usize];
    for s in 0..seeds {
        let mut y = x0.clone();
        for k in 0..iters {
            if let Some(e) = ledger.entries().iter().find(|e| e.iteration == k) {
                let mut rng = rng::keyed(s as u64, Stream::Perturbation, k);
                let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (v, d) in y.values_mut(0).iter_mut().zip(&dir) {
                    *v += e.recorded_norm * d / len;
                }
            }
            solver.step(&mut y)?;
            sums[k as usize] += diff_norm(&y, &optimum, &metric)?;
        }
    }
    (0..iters)
        .map(|k| {
            Ok(EnvelopePoint {
                iteration: k,
                mean_distance: sums[k as usize] / seeds as f64,
                envelope: bounds::distance_envelope(c, d0, &ledger, k)?,
            })
        })
        .collect()
}

/// Summary row for the envelope check: the worst ratio of mean distance to
/// envelope, passing when it stays at or below `1 + slack`.
pub fn envelope_row(points: &[EnvelopePoint], seeds: usize, slack: f64) -> CheckRow {
    let worst = points.iter().map(|p| p.mean_distance / p.envelope).fold(0.0, f64::max);
    CheckRow {
        check: "distance_envelope",
        parameter: slack,
        samples: seeds,
        value: worst,
        target: 1.0 + slack,
        passed: worst <= 1.0 + slack,
    }
}

/// Every check at its reference size.
pub fn run_all(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = vec![partial_never_exceeds_full(10_000, seed)?];
    for p in [0.1, 0.25, 0.5, 0.75] {
        rows.push(expected_partial_mass(p, 40, 10_000, 0.02, seed)?);
    }
    let points = distance_envelope_check(4, 10.0, 0.1, &[(5, 0.5), (20, 1.0), (40, 2.0)], 200, 120)?;
    rows.push(envelope_row(&points, 200, 0.05));
    Ok(rows)
}

//! Gradient descent on `0.5 x'Ax - b'x`.

use nalgebra::DVector;

use crate::datagen::QpSpec;
use crate::error::{Result, ScarError};
use crate::params::{ParameterState, ParameterUnit, UnitGroup};

use super::SolverConfig;

pub const QP_UNIT: u64 = 0;

#[derive(Debug)]
pub(crate) struct Qp<'a> {
    spec: &'a QpSpec,
}

fn as_vector(state: &ParameterState) -> DVector<f64> {
    DVector::from_column_slice(state.values(0))
}

impl<'a> Qp<'a> {
    pub(crate) fn new(spec: &'a QpSpec) -> Self {
        Self { spec }
    }

    pub(crate) fn unit_count(&self) -> usize {
        1
    }

    pub(crate) fn init(&self) -> Result<ParameterState> {
        state_from(0, vec![0.0; self.spec.dim()])
    }

    pub(crate) fn step(&self, state: &mut ParameterState, cfg: &SolverConfig) {
        let x = as_vector(state);
        let grad = self.spec.a() * &x - self.spec.b();
        let next = x - grad * cfg.step_size;
        state.values_mut(0).copy_from_slice(next.as_slice());
    }

    pub(crate) fn loss(&self, state: &ParameterState) -> f64 {
        let x = as_vector(state);
        0.5 * x.dot(&(self.spec.a() * &x)) - self.spec.b().dot(&x)
    }

    pub(crate) fn optimum(&self) -> Result<ParameterState> {
        let chol = self
            .spec
            .a()
            .clone()
            .cholesky()
            .ok_or_else(|| ScarError::argument("QP matrix is not positive definite"))?;
        let x = chol.solve(self.spec.b());
        state_from(0, x.as_slice().to_vec())
    }
}

/// A QP state holding `values` as its single unit.
pub fn state_from(iteration: u64, values: Vec<f64>) -> Result<ParameterState> {
    ParameterState::new(iteration, vec![ParameterUnit::new(QP_UNIT, UnitGroup::QpAll, values)])
}

/// Contraction factor of gradient descent with step `alpha`:
/// `max |1 - alpha * lambda|` over the spectrum of A.
pub fn gd_contraction(spec: &QpSpec, alpha: f64) -> f64 {
    spec.eigenvalues()
        .into_iter()
        .map(|l| (1.0 - alpha * l).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::datagen::{gen_qp, Dataset};
    use crate::params::{diff_norm, NormMetric};
    use crate::solvers::{self, ModelKind, Solver};

    fn cfg(step: f64) -> SolverConfig {
        SolverConfig {
            model: ModelKind::Qp,
            step_size: step,
            ..SolverConfig::default()
        }
    }

    fn data(diag: &[f64], b: &[f64]) -> Dataset {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
        Dataset::Qp(QpSpec::new(a, DVector::from_column_slice(b)).unwrap())
    }

    #[test]
    fn identity_unit_step_lands_on_zero() {
        let d = data(&[1.0; 4], &[0.0; 4]);
        let x = state_from(0, vec![3.0, -1.0, 7.5, 2.0]).unwrap();
        let next = solvers::step(&x, &cfg(1.0), &d).unwrap();
        assert_eq!(next.values(0), &[0.0; 4]);
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn diagonal_step_by_hand() {
        let d = data(&[1.0, 2.0], &[0.0, 0.0]);
        let x = state_from(0, vec![1.0, 1.0]).unwrap();
        let next = solvers::step(&x, &cfg(0.5), &d).unwrap();
        assert_eq!(next.values(0), &[0.5, 0.0]);
    }

    #[test]
    fn optimum_cases() {
        let d = data(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]);
        let x = solvers::analytic_optimum(&cfg(0.1), &d).unwrap();
        assert_eq!(x.values(0), &[1.0, 2.0, 3.0, 4.0]);

        let d = data(&[1.0, 2.0], &[2.0, 2.0]);
        let x = solvers::analytic_optimum(&cfg(0.1), &d).unwrap();
        assert!((x.values(0)[0] - 2.0).abs() < 1e-15 && (x.values(0)[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn optimum_residual_small_for_random_spd() {
        for seed in 0..20 {
            let d = gen_qp(6, 50.0, seed).unwrap();
            let Dataset::Qp(spec) = &d else { unreachable!() };
            let x = solvers::analytic_optimum(&cfg(0.1), &d).unwrap();
            let r = spec.a() * as_vector(&x) - spec.b();
            assert!(r.norm() < 1e-10);
        }
    }

    #[test]
    fn loss_at_optimum_is_minus_half_btab() {
        let d = data(&[1.0, 2.0], &[2.0, 2.0]);
        let s = Solver::new(cfg(0.1), &d).unwrap();
        let x = s.analytic_optimum().unwrap();
        // b'A^-1 b = 4/1 + 4/2 = 6
        assert!((s.loss(&x).unwrap() + 3.0).abs() < 1e-14);
    }

    #[test]
    fn per_step_contraction_never_exceeds_c() {
        for seed in 0..10 {
            let d = gen_qp(4, 10.0, seed).unwrap();
            let Dataset::Qp(spec) = &d else { unreachable!() };
            let alpha = 0.15;
            let c = gd_contraction(spec, alpha);
            let s = Solver::new(cfg(alpha), &d).unwrap();
            let opt = s.analytic_optimum().unwrap();
            let mut x = s.init().unwrap();
            let mut prev = diff_norm(&x, &opt, &NormMetric::euclidean()).unwrap();
            // Below this distance rounding in x dominates the ratio.
            let floor = 1e-6 * prev;
            for _ in 0..200 {
                s.step(&mut x).unwrap();
                let cur = diff_norm(&x, &opt, &NormMetric::euclidean()).unwrap();
                if prev < floor {
                    break;
                }
                assert!(cur / prev <= c + 1e-9, "ratio {} > c {c}", cur / prev);
                prev = cur;
            }
        }
    }

    #[test]
    fn non_spd_optimum_rejected_at_construction() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(QpSpec::new(a, DVector::zeros(2)).is_err());
    }
}

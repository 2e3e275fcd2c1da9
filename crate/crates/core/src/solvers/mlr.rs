//! Multinomial logistic regression trained by minibatch SGD.
//!
//! The weight matrix is `dim x classes`; unit `j` is row `j` (the weights of
//! input feature `j` across all classes).

use rand::seq::SliceRandom;

use crate::datagen::LabeledSparse;
use crate::error::{Result, ScarError};
use crate::params::{ParameterState, ParameterUnit, UnitGroup};
use crate::rng::{self, Stream};

use super::SolverConfig;

#[derive(Debug)]
pub(crate) struct Mlr<'a> {
    data: &'a LabeledSparse,
}

fn logits(state: &ParameterState, features: &[(usize, f64)], out: &mut [f64]) {
    out.iter_mut().for_each(|z| *z = 0.0);
    for &(j, x) in features {
        for (z, w) in out.iter_mut().zip(state.values(j)) {
            *z += w * x;
        }
    }
}

/// Turns logits into probabilities in place, returning `log(sum(exp(z)))`.
fn softmax(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    max + sum.ln()
}

impl<'a> Mlr<'a> {
    pub(crate) fn new(data: &'a LabeledSparse) -> Result<Self> {
        if data.samples.is_empty() {
            return Err(ScarError::argument("MLR needs at least one sample"));
        }
        if data.classes < 2 {
            return Err(ScarError::argument("MLR needs at least 2 classes"));
        }
        Ok(Self { data })
    }

    pub(crate) fn unit_count(&self) -> usize {
        self.data.dim
    }

    pub(crate) fn init(&self) -> Result<ParameterState> {
        let units = (0..self.data.dim)
            .map(|j| ParameterUnit::new(j as u64, UnitGroup::MlrRow, vec![0.0; self.data.classes]))
            .collect();
        ParameterState::new(0, units)
    }

    /// Sample indices of the minibatch used at `iteration`. Batches walk an
    /// epoch permutation, so every sample is seen once per epoch.
    pub(crate) fn minibatch(&self, iteration: u64, cfg: &SolverConfig) -> Vec<usize> {
        let n = self.data.samples.len();
        let batch = cfg.batch_size.min(n);
        let per_epoch = n.div_ceil(batch) as u64;
        let epoch = iteration / per_epoch;
        let pos = (iteration % per_epoch) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::keyed(cfg.seed, Stream::Minibatch, epoch));
        order[pos * batch..((pos + 1) * batch).min(n)].to_vec()
    }

    pub(crate) fn step(&self, state: &mut ParameterState, cfg: &SolverConfig) {
        let classes = self.data.classes;
        let batch = self.minibatch(state.iteration, cfg);
        let mut grad = vec![0.0; self.data.dim * classes];
        let mut z = vec![0.0; classes];
        for &i in &batch {
            let sample = &self.data.samples[i];
            logits(state, &sample.features, &mut z);
            softmax(&mut z);
            z[sample.label] -= 1.0;
            for &(j, x) in &sample.features {
                for (g, p) in grad[j * classes..(j + 1) * classes].iter_mut().zip(&z) {
                    *g += x * p;
                }
            }
        }
        let scale = cfg.step_size / batch.len() as f64;
        for j in 0..self.data.dim {
            for (w, g) in state
                .values_mut(j)
                .iter_mut()
                .zip(&grad[j * classes..(j + 1) * classes])
            {
                *w -= scale * g;
            }
        }
    }

    /// Summed cross-entropy over all samples.
    pub(crate) fn loss(&self, state: &ParameterState) -> f64 {
        let mut z = vec![0.0; self.data.classes];
        self.data
            .samples
            .iter()
            .map(|s| {
                logits(state, &s.features, &mut z);
                let target = z[s.label];
                softmax(&mut z) - target
            })
            .sum()
    }

    pub(crate) fn accuracy(&self, state: &ParameterState) -> f64 {
        let mut z = vec![0.0; self.data.classes];
        let correct = self
            .data
            .samples
            .iter()
            .filter(|s| {
                logits(state, &s.features, &mut z);
                let best = z.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(c, _)| c);
                best == Some(s.label)
            })
            .count();
        correct as f64 / self.data.samples.len() as f64
    }
}

/// Training-set accuracy of an MLR state.
pub fn accuracy(state: &ParameterState, data: &LabeledSparse) -> Result<f64> {
    let m = Mlr::new(data)?;
    if state.len() != m.unit_count() {
        return Err(ScarError::structural("state does not match dataset dimension"));
    }
    Ok(m.accuracy(state))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::datagen::{gen_classification_with, Dataset};
    use crate::solvers::{ModelKind, Solver};

    fn cfg() -> SolverConfig {
        SolverConfig {
            model: ModelKind::Mlr,
            step_size: 0.5,
            batch_size: 32,
            seed: 4,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn zero_weights_give_n_log_classes() {
        for classes in [2, 3, 7] {
            let d = gen_classification_with(50, 5, classes, 2.0, 1).unwrap();
            let s = Solver::new(cfg(), &d).unwrap();
            let x = s.init().unwrap();
            let want = 50.0 * (classes as f64).ln();
            assert!((s.loss(&x).unwrap() - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn minibatches_cover_each_epoch_without_replacement() {
        let d = gen_classification_with(100, 3, 2, 2.0, 1).unwrap();
        let Dataset::LabeledSparse(ls) = &d else { unreachable!() };
        let m = Mlr::new(ls).unwrap();
        let c = cfg();
        // 100 samples, batch 32 -> 4 batches per epoch (last one short).
        let mut seen = BTreeSet::new();
        for it in 0..4 {
            for i in m.minibatch(it, &c) {
                assert!(seen.insert(i), "sample {i} repeated within epoch");
            }
        }
        assert_eq!(seen.len(), 100);
        assert_eq!(m.minibatch(5, &c), m.minibatch(5, &c));
        assert_ne!(m.minibatch(0, &c), m.minibatch(4, &c));
    }

    #[test]
    fn separated_clusters_reach_high_accuracy() {
        let d = gen_classification_with(400, 6, 2, 6.0, 2).unwrap();
        let Dataset::LabeledSparse(ls) = &d else { unreachable!() };
        let s = Solver::new(cfg(), &d).unwrap();
        let mut x = s.init().unwrap();
        for _ in 0..200 {
            s.step(&mut x).unwrap();
        }
        assert!(accuracy(&x, ls).unwrap() > 0.95);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let d = gen_classification_with(200, 8, 3, 2.0, 3).unwrap();
        let run = || {
            let s = Solver::new(cfg(), &d).unwrap();
            let mut x = s.init().unwrap();
            (0..30)
                .map(|_| {
                    s.step(&mut x).unwrap();
                    s.loss(&x).unwrap().to_bits()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn huge_step_diverges_with_iteration() {
        let d = gen_classification_with(100, 4, 3, 2.0, 3).unwrap();
        let c = SolverConfig {
            step_size: 1e300,
            ..cfg()
        };
        let s = Solver::new(c, &d).unwrap();
        let mut x = s.init().unwrap();
        let mut err = None;
        for _ in 0..10 {
            if let Err(e) = s.step(&mut x).and_then(|_| s.loss(&x).map(|_| ())) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(ScarError::Divergence { .. })), "{err:?}");
    }
}

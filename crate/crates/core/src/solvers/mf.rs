//! Matrix factorization `R ~ L R'` by alternating least squares.
//!
//! Units `0..rows` are rows of `L`; units `rows..rows+cols` are columns of the
//! right factor. One iteration is a full sweep: every left row is solved
//! against the current right factor, then every right column against the new
//! left factor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::datagen::RatingTriples;
use crate::error::Result;
use crate::params::{ParameterState, ParameterUnit, UnitGroup};
use crate::rng::{self, Stream};

use super::SolverConfig;

#[derive(Debug)]
pub(crate) struct Mf<'a> {
    data: &'a RatingTriples,
    by_row: Vec<Vec<(usize, f64)>>,
    by_col: Vec<Vec<(usize, f64)>>,
}

impl<'a> Mf<'a> {
    pub(crate) fn new(data: &'a RatingTriples) -> Self {
        let mut by_row = vec![Vec::new(); data.rows];
        let mut by_col = vec![Vec::new(); data.cols];
        for r in &data.entries {
            by_row[r.row as usize].push((r.col as usize, r.value));
            by_col[r.col as usize].push((r.row as usize, r.value));
        }
        Self { data, by_row, by_col }
    }

    pub(crate) fn unit_count(&self) -> usize {
        self.data.rows + self.data.cols
    }

    pub(crate) fn init(&self, cfg: &SolverConfig) -> Result<ParameterState> {
        let mut rng = rng::keyed(cfg.seed, Stream::Init, 0);
        let mut units = Vec::with_capacity(self.unit_count());
        for i in 0..self.data.rows {
            let v = (0..cfg.factors).map(|_| rng.random::<f64>()).collect();
            units.push(ParameterUnit::new(i as u64, UnitGroup::MfLeftRow, v));
        }
        for j in 0..self.data.cols {
            let v = (0..cfg.factors).map(|_| rng.random::<f64>()).collect();
            units.push(ParameterUnit::new(
                (self.data.rows + j) as u64,
                UnitGroup::MfRightCol,
                v,
            ));
        }
        ParameterState::new(0, units)
    }

    // Solves `(sum f f' + lambda I) x = sum r f` over the observed partners.
    fn solve_one(
        state: &ParameterState,
        observed: &[(usize, f64)],
        partner_offset: usize,
        k: usize,
        lambda: f64,
    ) -> Option<Vec<f64>> {
        let mut gram = DMatrix::<f64>::identity(k, k) * lambda;
        let mut rhs = DVector::<f64>::zeros(k);
        for &(p, r) in observed {
            let f = state.values(partner_offset + p);
            for a in 0..k {
                rhs[a] += r * f[a];
                for b in 0..k {
                    gram[(a, b)] += f[a] * f[b];
                }
            }
        }
        let x = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.lu().solve(&rhs)?,
        };
        Some(x.as_slice().to_vec())
    }

    pub(crate) fn step(&self, state: &mut ParameterState, cfg: &SolverConfig) {
        let (rows, k, lambda) = (self.data.rows, cfg.factors, cfg.regularization);
        for i in 0..rows {
            // A singular system (row with no ratings and no ridge) keeps its value.
            if let Some(x) = Self::solve_one(state, &self.by_row[i], rows, k, lambda) {
                state.values_mut(i).copy_from_slice(&x);
            }
        }
        for j in 0..self.data.cols {
            if let Some(x) = Self::solve_one(state, &self.by_col[j], 0, k, lambda) {
                state.values_mut(rows + j).copy_from_slice(&x);
            }
        }
    }

    /// Sum of squared errors over observed ratings plus the ridge penalty.
    pub(crate) fn loss(&self, state: &ParameterState, cfg: &SolverConfig) -> f64 {
        let rows = self.data.rows;
        let sse: f64 = self
            .data
            .entries
            .iter()
            .map(|r| {
                let l = state.values(r.row as usize);
                let c = state.values(rows + r.col as usize);
                let pred: f64 = l.iter().zip(c).map(|(a, b)| a * b).sum();
                (r.value - pred).powi(2)
            })
            .sum();
        if cfg.regularization == 0.0 {
            return sse;
        }
        let ridge: f64 = state.units().iter().flat_map(|u| u.values.iter()).map(|v| v * v).sum();
        sse + cfg.regularization * ridge
    }
}

//! Parameter units, full parameter states, random partitioning and the norms
//! used to size perturbations.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScarError};
use crate::rng::{self, Stream};
use crate::solvers::lda::LdaAux;

/// Which model structure a unit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnitGroup {
    /// One row (input feature) of the MLR weight matrix.
    MlrRow,
    /// One row of the left MF factor.
    MfLeftRow,
    /// One column of the right MF factor.
    MfRightCol,
    /// One document: its topic distribution plus its token assignments.
    LdaDoc,
    /// The whole QP iterate.
    QpAll,
}

/// The granularity at which parameters are partitioned, saved and lost.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterUnit {
    pub unit_id: u64,
    pub group: UnitGroup,
    pub values: Vec<f64>,
}

impl ParameterUnit {
    pub fn new(unit_id: u64, group: UnitGroup, values: Vec<f64>) -> Self {
        Self { unit_id, group, values }
    }
}

/// Model state that is not itself a parameter but must travel with it.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Aux {
    #[default]
    None,
    Lda(LdaAux),
}

impl Aux {
    pub fn as_lda(&self) -> Option<&LdaAux> {
        match self {
            Aux::Lda(aux) => Some(aux),
            Aux::None => None,
        }
    }

    pub fn as_lda_mut(&mut self) -> Option<&mut LdaAux> {
        match self {
            Aux::Lda(aux) => Some(aux),
            Aux::None => None,
        }
    }
}

/// The full model at one iteration. Units are kept sorted by `unit_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub iteration: u64,
    units: Vec<ParameterUnit>,
    pub aux: Aux,
}

impl ParameterState {
    pub fn new(iteration: u64, mut units: Vec<ParameterUnit>) -> Result<Self> {
        units.sort_by_key(|u| u.unit_id);
        if let Some(w) = units.windows(2).find(|w| w[0].unit_id == w[1].unit_id) {
            return Err(ScarError::structural(format!("duplicate unit id {}", w[0].unit_id)));
        }
        Ok(Self {
            iteration,
            units,
            aux: Aux::None,
        })
    }

    pub fn with_aux(mut self, aux: Aux) -> Self {
        self.aux = aux;
        self
    }

    pub fn units(&self) -> &[ParameterUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Total number of scalar values across all units.
    pub fn dim(&self) -> usize {
        self.units.iter().map(|u| u.values.len()).sum()
    }

    pub fn unit_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.units.iter().map(|u| u.unit_id)
    }

    pub fn position(&self, unit_id: u64) -> Option<usize> {
        self.units.binary_search_by_key(&unit_id, |u| u.unit_id).ok()
    }

    pub fn unit(&self, unit_id: u64) -> Option<&ParameterUnit> {
        self.position(unit_id).map(|i| &self.units[i])
    }

    /// Mutable access to the values of the unit at `pos`. The unit id and
    /// group stay fixed.
    pub fn values_mut(&mut self, pos: usize) -> &mut [f64] {
        &mut self.units[pos].values
    }

    pub fn values(&self, pos: usize) -> &[f64] {
        &self.units[pos].values
    }

    /// Replaces the values of unit `pos`, checking the dimension.
    pub fn set_values(&mut self, pos: usize, values: &[f64]) -> Result<()> {
        let unit = &mut self.units[pos];
        if unit.values.len() != values.len() {
            return Err(ScarError::structural(format!(
                "unit {} has {} values, got {}",
                unit.unit_id,
                unit.values.len(),
                values.len()
            )));
        }
        unit.values.copy_from_slice(values);
        Ok(())
    }

    /// Applies `f` to every scalar value.
    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mut out = self.clone();
        for u in &mut out.units {
            for v in &mut u.values {
                *v = f(*v);
            }
        }
        out
    }

    /// Checks that both states have the same unit ids and per-unit lengths.
    pub fn check_same_shape(&self, other: &ParameterState) -> Result<()> {
        if self.units.len() != other.units.len() {
            return Err(ScarError::structural(format!(
                "unit count {} vs {}",
                self.units.len(),
                other.units.len()
            )));
        }
        for (a, b) in self.units.iter().zip(&other.units) {
            if a.unit_id != b.unit_id {
                return Err(ScarError::structural(format!("unit id {} vs {}", a.unit_id, b.unit_id)));
            }
            if a.values.len() != b.values.len() {
                return Err(ScarError::structural(format!(
                    "unit {} has {} values vs {}",
                    a.unit_id,
                    a.values.len(),
                    b.values.len()
                )));
            }
        }
        Ok(())
    }

    /// Flattened copy of every value in unit order.
    pub fn flatten(&self) -> Vec<f64> {
        self.units.iter().flat_map(|u| u.values.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Euclidean,
    ScaledTotalVariation,
}

/// The norm used to measure the size of a perturbation.
///
/// Scaled total variation sums `weight * 0.5 * sum_t |p_t - q_t|` over units,
/// where the weight of a document unit is its token count.
#[derive(Debug, Clone, PartialEq)]
pub struct NormMetric {
    kind: NormKind,
    weights: BTreeMap<u64, f64>,
}

impl NormMetric {
    pub fn euclidean() -> Self {
        Self {
            kind: NormKind::Euclidean,
            weights: BTreeMap::new(),
        }
    }

    pub fn scaled_tv(weights: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let weights: BTreeMap<u64, f64> = weights.into_iter().collect();
        if let Some((id, w)) = weights.iter().find(|(_, w)| !(**w > 0.0 && w.is_finite())) {
            return Err(ScarError::argument(format!("unit {id} has non-positive weight {w}")));
        }
        Ok(Self {
            kind: NormKind::ScaledTotalVariation,
            weights,
        })
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn weight(&self, unit_id: u64) -> Result<f64> {
        match self.kind {
            NormKind::Euclidean => Ok(1.0),
            NormKind::ScaledTotalVariation => self
                .weights
                .get(&unit_id)
                .copied()
                .ok_or_else(|| ScarError::structural(format!("no scaled-TV weight for unit {unit_id}"))),
        }
    }

    // Additive per-unit contribution; `finish` turns the sum into the norm.
    fn unit_term(&self, unit_id: u64, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(match self.kind {
            NormKind::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            NormKind::ScaledTotalVariation => {
                let tv: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
                self.weight(unit_id)? * 0.5 * tv
            }
        })
    }

    fn finish(&self, total: f64) -> f64 {
        match self.kind {
            NormKind::Euclidean => total.sqrt(),
            NormKind::ScaledTotalVariation => total,
        }
    }

    /// The metric restricted to a single unit.
    pub fn unit_distance(&self, unit_id: u64, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(ScarError::structural(format!(
                "unit {unit_id} has {} values vs {}",
                a.len(),
                b.len()
            )));
        }
        Ok(self.finish(self.unit_term(unit_id, a, b)?))
    }
}

/// `||a - b||` under `metric`.
pub fn diff_norm(a: &ParameterState, b: &ParameterState, metric: &NormMetric) -> Result<f64> {
    a.check_same_shape(b)?;
    let mut total = 0.0;
    for (ua, ub) in a.units.iter().zip(&b.units) {
        total += metric.unit_term(ua.unit_id, &ua.values, &ub.values)?;
    }
    Ok(metric.finish(total))
}

/// The fragment of `a` holding exactly the units in `subset`. Auxiliary
/// model state is not carried over.
pub fn restrict(a: &ParameterState, subset: &BTreeSet<u64>) -> Result<ParameterState> {
    let mut units = Vec::with_capacity(subset.len());
    for &id in subset {
        let unit = a
            .unit(id)
            .ok_or_else(|| ScarError::structural(format!("unknown unit id {id}")))?;
        units.push(unit.clone());
    }
    Ok(ParameterState {
        iteration: a.iteration,
        units,
        aux: Aux::None,
    })
}

/// Assignment of units to parameter-server shards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionMap {
    assignment: BTreeMap<u64, usize>,
    shard_count: usize,
    seed: u64,
}

impl PartitionMap {
    pub fn shard_count(&self) -> usize {
        self.shard_count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shard_of(&self, unit_id: u64) -> Option<usize> {
        self.assignment.get(&unit_id).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<u64, usize> {
        &self.assignment
    }

    pub fn units_on(&self, shard: usize) -> BTreeSet<u64> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == shard)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.shard_count];
        for s in self.assignment.values() {
            sizes[*s] += 1;
        }
        sizes
    }
}

/// Assigns each unit to a shard independently and uniformly at random.
pub fn random_partition(unit_ids: impl IntoIterator<Item = u64>, shards: usize, seed: u64) -> Result<PartitionMap> {
    if shards == 0 {
        return Err(ScarError::argument("shard count must be at least 1"));
    }
    let ids: BTreeSet<u64> = unit_ids.into_iter().collect();
    let mut rng = rng::keyed(seed, Stream::Partition, 0);
    let assignment = ids.into_iter().map(|id| (id, rng.random_range(0..shards))).collect();
    Ok(PartitionMap {
        assignment,
        shard_count: shards,
        seed,
    })
}

//! Running checkpoints, partial checkpoint selection, failure injection and
//! full or partial recovery over simulated parameter-server shards.

pub mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ScarError};
use crate::params::{NormMetric, ParameterState, PartitionMap};
use crate::perturb::{fraction_count, sample_units, Perturbation, PerturbationKind};
use crate::rng::{self, Stream};
use crate::solvers::lda::doc_topic_distribution;
use crate::solvers::AuxRebuild;

use self::log::{LogRecord, LogSink, Payload};

/// Parameter values held by simulated shards, with per-shard liveness.
#[derive(Debug, Clone)]
pub struct ShardStore {
    partition: PartitionMap,
    shards: Vec<BTreeMap<u64, Vec<f64>>>,
    alive: Vec<bool>,
    lost: BTreeSet<u64>,
}

impl ShardStore {
    pub fn new(state: &ParameterState, partition: PartitionMap) -> Result<Self> {
        let mut shards = vec![BTreeMap::new(); partition.shard_count()];
        for u in state.units() {
            let shard = partition
                .shard_of(u.unit_id)
                .ok_or_else(|| ScarError::structural(format!("unit {} has no shard", u.unit_id)))?;
            shards[shard].insert(u.unit_id, u.values.clone());
        }
        let alive = vec![true; shards.len()];
        Ok(Self {
            partition,
            shards,
            alive,
            lost: BTreeSet::new(),
        })
    }

    pub fn partition(&self) -> &PartitionMap {
        &self.partition
    }

    pub fn unit_ids(&self) -> Vec<u64> {
        self.partition.assignment().keys().copied().collect()
    }

    pub fn alive_shards(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    pub fn is_accessible(&self, unit_id: u64) -> bool {
        !self.lost.contains(&unit_id) && self.partition.shard_of(unit_id).is_some_and(|s| self.alive[s])
    }

    pub fn get(&self, unit_id: u64) -> Result<&[f64]> {
        if !self.is_accessible(unit_id) {
            return Err(ScarError::Unrecoverable { unit_id });
        }
        let shard = self.partition.shard_of(unit_id).expect("accessible units have a shard");
        Ok(&self.shards[shard][&unit_id])
    }

    /// Units that are lost or live on a dead shard.
    pub fn inaccessible(&self) -> BTreeSet<u64> {
        self.partition
            .assignment()
            .keys()
            .copied()
            .filter(|id| !self.is_accessible(*id))
            .collect()
    }

    pub fn lose_units(&mut self, units: &BTreeSet<u64>) {
        self.lost.extend(units.iter().copied());
    }

    pub fn kill_shard(&mut self, shard: usize) {
        self.alive[shard] = false;
    }

    /// Writes recovered values back and makes every unit accessible again.
    pub fn restore(&mut self, state: &ParameterState) -> Result<()> {
        for u in state.units() {
            let shard = self
                .partition
                .shard_of(u.unit_id)
                .ok_or_else(|| ScarError::structural(format!("unit {} has no shard", u.unit_id)))?;
            self.shards[shard].insert(u.unit_id, u.values.clone());
        }
        self.alive.iter_mut().for_each(|a| *a = true);
        self.lost.clear();
        Ok(())
    }
}

/// Dirichlet smoothing used to turn saved LDA topic ids back into
/// document-topic distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaSmoothing {
    pub topics: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SavedUnit {
    pub saved_iteration: u64,
    pub values: Vec<f64>,
    /// Token-topic assignments for LDA documents.
    pub topics: Option<Vec<u32>>,
}

impl SavedUnit {
    fn encoded_len(&self) -> usize {
        21 + match &self.topics {
            Some(t) => 4 * t.len(),
            None => 8 * self.values.len(),
        }
    }
}

/// The latest saved copy of every unit, backed by an append-only log.
#[derive(Debug)]
pub struct RunningCheckpoint {
    records: BTreeMap<u64, SavedUnit>,
    sink: LogSink,
    lda: Option<LdaSmoothing>,
    bytes_appended: u64,
}

impl RunningCheckpoint {
    /// Starts a checkpoint with a full save of `initial`.
    pub fn initialize(initial: &ParameterState, sink: LogSink, lda: Option<LdaSmoothing>) -> Result<Self> {
        if initial.aux.as_lda().is_some() && lda.is_none() {
            return Err(ScarError::argument("LDA checkpoints need the smoothing parameters"));
        }
        let mut ckpt = Self {
            records: BTreeMap::new(),
            sink,
            lda,
            bytes_appended: 0,
        };
        let all: BTreeSet<u64> = initial.unit_ids().collect();
        ckpt.save(initial, &all)?;
        Ok(ckpt)
    }

    pub fn get(&self, unit_id: u64) -> Option<&SavedUnit> {
        self.records.get(&unit_id)
    }

    pub fn records(&self) -> &BTreeMap<u64, SavedUnit> {
        &self.records
    }

    /// Record bytes appended so far, header excluded.
    pub fn bytes_appended(&self) -> u64 {
        self.bytes_appended
    }

    /// Bytes read back when restoring `units`.
    pub fn restore_bytes<'a>(&self, units: impl IntoIterator<Item = &'a u64>) -> u64 {
        units
            .into_iter()
            .filter_map(|id| self.records.get(id))
            .map(|r| r.encoded_len() as u64)
            .sum()
    }

    /// Saves the `chosen` units of `current`. The log append happens first;
    /// if it fails the in-memory view is left as it was.
    pub fn save(&mut self, current: &ParameterState, chosen: &BTreeSet<u64>) -> Result<u64> {
        let lda = current.aux.as_lda();
        let mut staged = Vec::with_capacity(chosen.len());
        let mut bytes = Vec::new();
        for &id in chosen {
            let pos = current
                .position(id)
                .ok_or_else(|| ScarError::structural(format!("cannot save unknown unit {id}")))?;
            let topics = lda.map(|a| a.assignments[pos].clone());
            let payload = match &topics {
                Some(t) => Payload::Topics(t.clone()),
                None => Payload::Values(current.values(pos).to_vec()),
            };
            LogRecord {
                unit_id: id,
                saved_iteration: current.iteration,
                payload,
            }
            .encode_into(&mut bytes);
            staged.push((
                id,
                SavedUnit {
                    saved_iteration: current.iteration,
                    values: current.values(pos).to_vec(),
                    topics,
                },
            ));
        }
        self.sink.append(&bytes)?;
        self.bytes_appended += bytes.len() as u64;
        self.records.extend(staged);
        Ok(bytes.len() as u64)
    }

    /// The whole log as written so far, header included.
    pub fn log_bytes(&self) -> Result<Vec<u8>> {
        self.sink.read_all()
    }

    /// Rebuilds the per-unit view from the log alone.
    pub fn replay(&self) -> Result<BTreeMap<u64, SavedUnit>> {
        replay_bytes(&self.sink.read_all()?, self.lda)
    }
}

fn replay_bytes(bytes: &[u8], lda: Option<LdaSmoothing>) -> Result<BTreeMap<u64, SavedUnit>> {
    log::replay(bytes)?
        .into_iter()
        .map(|(id, r)| {
            let unit = match r.payload {
                Payload::Values(values) => SavedUnit {
                    saved_iteration: r.saved_iteration,
                    values,
                    topics: None,
                },
                Payload::Topics(topics) => {
                    let s =
                        lda.ok_or_else(|| ScarError::CorruptLog("topic records need LDA smoothing parameters".into()))?;
                    SavedUnit {
                        saved_iteration: r.saved_iteration,
                        values: doc_topic_distribution(&topics, s.topics, s.alpha),
                        topics: Some(topics),
                    }
                }
            };
            Ok((id, unit))
        })
        .collect()
}

/// Reads a checkpoint log file back into a per-unit view.
pub fn replay_file(path: &Path, lda: Option<LdaSmoothing>) -> Result<BTreeMap<u64, SavedUnit>> {
    replay_bytes(&std::fs::read(path)?, lda)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Priority,
    Round,
    Random,
    Full,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::Priority => "priority",
            Selection::Round => "round",
            Selection::Random => "random",
            Selection::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointPolicy {
    interval_iters: u64,
    ratio: f64,
    selection: Selection,
}

impl CheckpointPolicy {
    pub fn new(interval_iters: u64, ratio: f64, selection: Selection) -> Result<Self> {
        if interval_iters == 0 {
            return Err(ScarError::argument("checkpoint interval must be positive"));
        }
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(ScarError::argument("checkpoint ratio must lie in (0, 1]"));
        }
        if selection == Selection::Full && ratio != 1.0 {
            return Err(ScarError::argument("full checkpoints save every unit (ratio 1)"));
        }
        Ok(Self {
            interval_iters,
            ratio,
            selection,
        })
    }

    /// Full checkpoints every `interval_iters`.
    pub fn full(interval_iters: u64) -> Result<Self> {
        Self::new(interval_iters, 1.0, Selection::Full)
    }

    pub fn interval_iters(&self) -> u64 {
        self.interval_iters
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn selection(&self) -> Selection {
        self.selection
    }

    /// Units written by the save after the step that produced `iteration`.
    ///
    /// Save `j` writes `ceil(j r n) - ceil((j - 1) r n)` units, so every
    /// `1 / r` consecutive saves write `n` units in total and the volume per
    /// full-checkpoint interval matches a full save.
    pub fn save_count(&self, n: usize, iteration: u64) -> usize {
        if self.ratio == 1.0 {
            return n;
        }
        let j = (iteration / self.interval_iters).max(1) as f64;
        let upto = |j: f64| (j * self.ratio * n as f64).ceil() as usize;
        upto(j) - upto(j - 1.0)
    }

    /// Whether a save follows the step that produced `iteration`.
    pub fn saves_at(&self, iteration: u64) -> bool {
        iteration.is_multiple_of(self.interval_iters)
    }
}

/// Chooses the units of the next partial save.
///
/// `cursor` is the round-robin position in ascending unit order and is
/// advanced by round selection only.
pub fn select_for_checkpoint(
    current: &ParameterState,
    ckpt: &RunningCheckpoint,
    policy: &CheckpointPolicy,
    metric: &NormMetric,
    cursor: &mut usize,
    seed: u64,
) -> Result<BTreeSet<u64>> {
    let ids: Vec<u64> = current.unit_ids().collect();
    let n = ids.len();
    let m = policy.save_count(n, current.iteration);
    if m >= n || policy.selection == Selection::Full {
        return Ok(ids.into_iter().collect());
    }
    match policy.selection {
        Selection::Priority => {
            let mut scored = Vec::with_capacity(n);
            for u in current.units() {
                let saved = ckpt
                    .get(u.unit_id)
                    .ok_or(ScarError::Unrecoverable { unit_id: u.unit_id })?;
                scored.push((metric.unit_distance(u.unit_id, &u.values, &saved.values)?, u.unit_id));
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            Ok(scored.into_iter().take(m).map(|(_, id)| id).collect())
        }
        Selection::Round => {
            let start = *cursor % n;
            *cursor = (start + m) % n;
            Ok((0..m).map(|i| ids[(start + i) % n]).collect())
        }
        Selection::Random => {
            let mut rng = rng::keyed(seed, Stream::Selection, current.iteration);
            Ok(sample_units(&ids, m, &mut rng))
        }
        Selection::Full => unreachable!("handled above"),
    }
}

/// Applies `select_for_checkpoint` and saves the chosen units.
pub fn save_checkpoint(current: &ParameterState, ckpt: &mut RunningCheckpoint, chosen: &BTreeSet<u64>) -> Result<u64> {
    ckpt.save(current, chosen)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureEvent {
    pub iteration: u64,
    pub lost_units: BTreeSet<u64>,
    pub fraction: f64,
}

impl FailureEvent {
    pub fn new(iteration: u64, lost_units: BTreeSet<u64>, total_units: usize) -> Result<Self> {
        if lost_units.is_empty() {
            return Err(ScarError::argument("a failure loses at least one unit"));
        }
        let fraction = lost_units.len() as f64 / total_units as f64;
        Ok(Self {
            iteration,
            lost_units,
            fraction,
        })
    }
}

/// `1 + Geometric(geom_p)` clamped into `[1, 0.8 max_iters)`.
pub fn sample_failure_iteration(geom_p: f64, seed: u64, max_iters: u64) -> Result<u64> {
    if !(geom_p > 0.0 && geom_p < 1.0) {
        return Err(ScarError::argument("geom_p must lie in (0, 1)"));
    }
    let dist = Geometric::new(geom_p).map_err(|e| ScarError::argument(e.to_string()))?;
    let draw = dist.sample(&mut rng::keyed(seed, Stream::Failure, 0));
    let cap = ((0.8 * max_iters as f64).ceil() as u64).saturating_sub(1).max(1);
    Ok(draw.saturating_add(1).min(cap))
}

/// Fails a uniform `ceil(target_fraction * n)`-subset of units at a
/// geometrically distributed iteration and marks them inaccessible.
pub fn inject_failure(
    store: &mut ShardStore,
    geom_p: f64,
    target_fraction: f64,
    seed: u64,
    max_iters: u64,
) -> Result<FailureEvent> {
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(ScarError::argument("failure fraction must lie in (0, 1]"));
    }
    if store.alive_shards() == 0 {
        return Err(ScarError::argument("no shard is alive"));
    }
    let iteration = sample_failure_iteration(geom_p, seed, max_iters)?;
    let ids = store.unit_ids();
    let mut rng = rng::keyed(seed, Stream::LostSet, 0);
    let lost = sample_units(&ids, fraction_count(target_fraction, ids.len()), &mut rng);
    store.lose_units(&lost);
    FailureEvent::new(iteration, lost, ids.len())
}

/// Kills `shards` distinct non-empty shards chosen uniformly; the event
/// loses every unit they hold.
pub fn inject_shard_failure(
    store: &mut ShardStore,
    geom_p: f64,
    shards: usize,
    seed: u64,
    max_iters: u64,
) -> Result<FailureEvent> {
    let candidates: Vec<usize> = (0..store.partition.shard_count())
        .filter(|s| store.alive[*s] && !store.shards[*s].is_empty())
        .collect();
    if shards == 0 || shards > candidates.len() {
        return Err(ScarError::argument(format!(
            "cannot kill {shards} of {} live non-empty shards",
            candidates.len()
        )));
    }
    let iteration = sample_failure_iteration(geom_p, seed, max_iters)?;
    let mut rng = rng::keyed(seed, Stream::LostSet, 0);
    let mut lost = BTreeSet::new();
    for i in index::sample(&mut rng, candidates.len(), shards) {
        let s = candidates[i];
        store.kill_shard(s);
        lost.extend(store.shards[s].keys().copied());
    }
    FailureEvent::new(iteration, lost, store.partition.assignment().len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryMode {
    Full,
    Partial,
}

impl RecoveryMode {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryMode::Full => "full",
            RecoveryMode::Partial => "partial",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub state: ParameterState,
    pub perturbation: Perturbation,
    pub bytes_restored: u64,
}

/// Restores units from `ckpt`: every unit in full mode, only the lost ones
/// in partial mode. The perturbation is measured against `state_at_t`.
pub fn recover(
    state_at_t: &ParameterState,
    ckpt: &RunningCheckpoint,
    event: &FailureEvent,
    mode: RecoveryMode,
    metric: &NormMetric,
    rebuild: &dyn AuxRebuild,
) -> Result<Recovery> {
    let all: BTreeSet<u64>;
    let targets = match mode {
        RecoveryMode::Full => {
            all = state_at_t.unit_ids().collect();
            &all
        }
        RecoveryMode::Partial => &event.lost_units,
    };
    let mut state = state_at_t.clone();
    for &id in targets {
        let saved = ckpt.get(id).ok_or(ScarError::Unrecoverable { unit_id: id })?;
        let pos = state
            .position(id)
            .ok_or_else(|| ScarError::structural(format!("lost unit {id} is not in the state")))?;
        state.set_values(pos, &saved.values)?;
        if let (Some(aux), Some(topics)) = (state.aux.as_lda_mut(), &saved.topics) {
            aux.assignments[pos] = topics.clone();
        }
    }
    if state.aux.as_lda().is_some() {
        rebuild.rebuild_aux(&mut state)?;
    }
    let perturbation = Perturbation::between(PerturbationKind::Recovery, state_at_t, &state, metric)?;
    Ok(Recovery {
        state,
        perturbation,
        bytes_restored: ckpt.restore_bytes(targets),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{random_partition, ParameterUnit, UnitGroup};
    use crate::solvers::NoAux;

    fn state(iteration: u64, values: &[&[f64]]) -> ParameterState {
        let units = values
            .iter()
            .enumerate()
            .map(|(i, v)| ParameterUnit::new(i as u64, UnitGroup::MlrRow, v.to_vec()))
            .collect();
        ParameterState::new(iteration, units).unwrap()
    }

    fn repeat(iteration: u64, values: &[f64], n: usize) -> ParameterState {
        state(iteration, &vec![values; n])
    }

    fn mem_ckpt(initial: &ParameterState) -> RunningCheckpoint {
        RunningCheckpoint::initialize(initial, LogSink::memory(), None).unwrap()
    }

    fn set(ids: &[u64]) -> BTreeSet<u64> {
        ids.iter().copied().collect()
    }

    #[test]
    fn priority_takes_largest_drift() {
        let zero = state(0, &[&[0.0], &[0.0], &[0.0], &[0.0]]);
        let ckpt = mem_ckpt(&zero);
        let cur = state(3, &[&[5.0], &[1.0], &[3.0], &[-2.0]]);
        let p = CheckpointPolicy::new(1, 0.5, Selection::Priority).unwrap();
        let got = select_for_checkpoint(&cur, &ckpt, &p, &NormMetric::euclidean(), &mut 0, 0).unwrap();
        assert_eq!(got, set(&[0, 2]));
    }

    #[test]
    fn priority_ties_break_by_ascending_id() {
        let zero = state(0, &[&[0.0], &[0.0], &[0.0]]);
        let ckpt = mem_ckpt(&zero);
        let cur = state(1, &[&[1.0], &[-1.0], &[1.0]]);
        let p = CheckpointPolicy::new(1, 0.5, Selection::Priority).unwrap();
        let got = select_for_checkpoint(&cur, &ckpt, &p, &NormMetric::euclidean(), &mut 0, 0).unwrap();
        assert_eq!(got, set(&[0, 1]));
    }

    #[test]
    fn ratio_one_selects_everything() {
        let x = state(0, &[&[1.0], &[2.0], &[3.0]]);
        let ckpt = mem_ckpt(&x);
        for sel in [
            Selection::Priority,
            Selection::Round,
            Selection::Random,
            Selection::Full,
        ] {
            let p = CheckpointPolicy::new(4, 1.0, sel).unwrap();
            let got = select_for_checkpoint(&x, &ckpt, &p, &NormMetric::euclidean(), &mut 2, 9).unwrap();
            assert_eq!(got, set(&[0, 1, 2]));
        }
        assert!(CheckpointPolicy::new(4, 0.5, Selection::Full).is_err());
        assert!(CheckpointPolicy::new(0, 0.5, Selection::Round).is_err());
    }

    #[test]
    fn partial_saves_add_up_to_one_full_save_per_interval() {
        for (n, ratio) in [(101, 0.125), (101, 0.25), (7, 0.5), (3, 0.125), (64, 0.25)] {
            let period = (1.0 / ratio) as u64;
            let p = CheckpointPolicy::new(2, ratio, Selection::Round).unwrap();
            for window in 0..3 {
                let total: usize = (1..=period).map(|j| p.save_count(n, 2 * (window * period + j))).sum();
                assert_eq!(total, n, "n {n} ratio {ratio} window {window}");
            }
        }
        assert_eq!(
            CheckpointPolicy::new(2, 0.125, Selection::Round)
                .unwrap()
                .save_count(101, 2),
            13
        );
    }

    #[test]
    fn round_robin_wraps() {
        let x = state(0, &[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let ckpt = mem_ckpt(&x);
        let p = CheckpointPolicy::new(1, 0.5, Selection::Round).unwrap();
        let mut cursor = 4;
        let m = NormMetric::euclidean();
        assert_eq!(
            select_for_checkpoint(&x, &ckpt, &p, &m, &mut cursor, 0).unwrap(),
            set(&[0, 1])
        );
        assert_eq!(
            select_for_checkpoint(&x, &ckpt, &p, &m, &mut cursor, 0).unwrap(),
            set(&[2, 3])
        );
        let p3 = CheckpointPolicy::new(1, 0.75, Selection::Round).unwrap();
        let mut c = 2;
        assert_eq!(
            select_for_checkpoint(&x, &ckpt, &p3, &m, &mut c, 0).unwrap(),
            set(&[2, 3, 0])
        );
        assert_eq!(c, 1);
    }

    #[test]
    fn random_selection_is_seeded() {
        let x = repeat(5, &[1.0], 20);
        let ckpt = mem_ckpt(&x);
        let p = CheckpointPolicy::new(1, 0.25, Selection::Random).unwrap();
        let m = NormMetric::euclidean();
        let a = select_for_checkpoint(&x, &ckpt, &p, &m, &mut 0, 3).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, select_for_checkpoint(&x, &ckpt, &p, &m, &mut 0, 3).unwrap());
    }

    #[test]
    fn saved_units_have_zero_priority_distance() {
        let zero = state(0, &[&[0.0], &[0.0], &[0.0], &[0.0]]);
        let mut ckpt = mem_ckpt(&zero);
        let cur = state(3, &[&[5.0], &[1.0], &[3.0], &[2.0]]);
        let m = NormMetric::euclidean();
        ckpt.save(&cur, &set(&[0, 2])).unwrap();
        for id in [0, 2] {
            let pos = cur.position(id).unwrap();
            assert_eq!(
                m.unit_distance(id, cur.values(pos), &ckpt.get(id).unwrap().values)
                    .unwrap(),
                0.0
            );
            assert_eq!(ckpt.get(id).unwrap().saved_iteration, 3);
        }
        assert_eq!(ckpt.get(1).unwrap().saved_iteration, 0);
    }

    #[test]
    fn disjoint_saves_commute() {
        let zero = repeat(0, &[0.0], 4);
        let cur = state(2, &[&[1.0], &[2.0], &[3.0], &[4.0]]);
        let mut a = mem_ckpt(&zero);
        a.save(&cur, &set(&[0, 1])).unwrap();
        a.save(&cur, &set(&[3])).unwrap();
        let mut b = mem_ckpt(&zero);
        b.save(&cur, &set(&[3])).unwrap();
        b.save(&cur, &set(&[0, 1])).unwrap();
        assert_eq!(a.records(), b.records());
    }

    #[test]
    fn failed_append_leaves_view_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt-0.scar");
        let zero = repeat(0, &[0.0], 3);
        let mut ckpt = RunningCheckpoint::initialize(&zero, LogSink::create(&path).unwrap(), None).unwrap();
        let before = ckpt.records().clone();
        let bytes = ckpt.bytes_appended();
        // A read-only handle makes every append fail.
        ckpt.sink = LogSink::File {
            path: path.clone(),
            file: std::fs::File::open(&path).unwrap(),
        };
        let cur = repeat(1, &[1.0], 3);
        assert!(matches!(ckpt.save(&cur, &set(&[0, 1])), Err(ScarError::Io(_))));
        assert_eq!(ckpt.records(), &before);
        assert_eq!(ckpt.bytes_appended(), bytes);
        assert_eq!(ckpt.replay().unwrap(), before);
    }

    #[test]
    fn file_log_replays_to_view() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt-3.scar");
        let x0 = repeat(0, &[0.5, 1.5], 6);
        let mut ckpt = RunningCheckpoint::initialize(&x0, LogSink::create(&path).unwrap(), None).unwrap();
        for k in 1..=10u64 {
            let xk = x0.map_values(|v| v * k as f64);
            let xk = ParameterState::new(k, xk.units().to_vec()).unwrap();
            ckpt.save(&xk, &set(&[k % 6, (k * 5) % 6])).unwrap();
        }
        assert_eq!(&replay_file(&path, None).unwrap(), ckpt.records());
        assert_eq!(
            std::fs::metadata(&path).unwrap().len(),
            log::HEADER_LEN as u64 + ckpt.bytes_appended()
        );
    }

    #[test]
    fn partial_and_full_recovery_by_hand() {
        let z = state(0, &[&[0.0], &[0.0]]);
        let ckpt = mem_ckpt(&z);
        let x = state(9, &[&[3.0], &[4.0]]);
        let event = FailureEvent::new(9, set(&[0]), 2).unwrap();
        let m = NormMetric::euclidean();
        let partial = recover(&x, &ckpt, &event, RecoveryMode::Partial, &m, &NoAux).unwrap();
        let full = recover(&x, &ckpt, &event, RecoveryMode::Full, &m, &NoAux).unwrap();
        assert_eq!(partial.perturbation.recorded_norm, 3.0);
        assert_eq!(full.perturbation.recorded_norm, 5.0);
        assert_eq!(partial.state.values(1), &[4.0]);
        assert_eq!(partial.state.iteration, 9);
        assert_eq!(full.bytes_restored, 2 * partial.bytes_restored);

        let everything = FailureEvent::new(9, set(&[0, 1]), 2).unwrap();
        let p = recover(&x, &ckpt, &everything, RecoveryMode::Partial, &m, &NoAux).unwrap();
        let f = recover(&x, &ckpt, &everything, RecoveryMode::Full, &m, &NoAux).unwrap();
        assert_eq!(p.state, f.state);
        assert_eq!(p.perturbation.recorded_norm, f.perturbation.recorded_norm);
    }

    #[test]
    fn missing_record_is_unrecoverable() {
        let z = state(0, &[&[0.0]]);
        let ckpt = mem_ckpt(&z);
        let x = state(1, &[&[1.0], &[2.0]]);
        let event = FailureEvent::new(1, set(&[1]), 2).unwrap();
        let r = recover(
            &x,
            &ckpt,
            &event,
            RecoveryMode::Partial,
            &NormMetric::euclidean(),
            &NoAux,
        );
        assert!(matches!(r, Err(ScarError::Unrecoverable { unit_id: 1 })));
    }

    #[test]
    fn failures_are_seeded_and_sized() {
        let x = repeat(0, &[1.0], 40);
        let part = random_partition(x.unit_ids(), 4, 1).unwrap();
        let mut s1 = ShardStore::new(&x, part.clone()).unwrap();
        let mut s2 = ShardStore::new(&x, part.clone()).unwrap();
        let a = inject_failure(&mut s1, 0.05, 0.25, 11, 1000).unwrap();
        let b = inject_failure(&mut s2, 0.05, 0.25, 11, 1000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lost_units.len(), 10);
        assert_eq!(a.fraction, 0.25);
        assert_eq!(s1.inaccessible(), a.lost_units);
        let lost = *a.lost_units.first().unwrap();
        assert!(matches!(s1.get(lost), Err(ScarError::Unrecoverable { .. })));

        let mut s3 = ShardStore::new(&x, part).unwrap();
        let all = inject_failure(&mut s3, 0.05, 1.0, 2, 1000).unwrap();
        assert_eq!(all.lost_units.len(), 40);
        assert!(inject_failure(&mut s3, 0.05, 0.0, 2, 1000).is_err());
        s3.restore(&x).unwrap();
        assert!(s3.inaccessible().is_empty());
    }

    #[test]
    fn failure_iteration_is_geometric() {
        let p = 0.02;
        let n = 10_000;
        let mean = (0..n)
            .map(|s| sample_failure_iteration(p, s, 1_000_000).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean * p - 1.0).abs() < 0.05, "mean {mean}");
        for s in 0..1000 {
            let t = sample_failure_iteration(0.001, s, 100).unwrap();
            assert!((1..80).contains(&t));
        }
    }

    #[test]
    fn shard_failure_loses_whole_shards() {
        let x = repeat(0, &[1.0], 50);
        let part = random_partition(x.unit_ids(), 5, 3).unwrap();
        let mut store = ShardStore::new(&x, part.clone()).unwrap();
        let ev = inject_shard_failure(&mut store, 0.1, 2, 4, 100).unwrap();
        let dead: BTreeSet<usize> = ev.lost_units.iter().map(|u| part.shard_of(*u).unwrap()).collect();
        assert_eq!(dead.len(), 2);
        let expect: BTreeSet<u64> = dead.iter().flat_map(|s| part.units_on(*s)).collect();
        assert_eq!(ev.lost_units, expect);
        assert_eq!(store.alive_shards(), 3);
        assert_eq!(store.inaccessible(), expect);
    }
}

use std::collections::BTreeSet;

use proptest::prelude::*;
use scar_core::bounds;
use scar_core::checkpoint::log::LogSink;
use scar_core::checkpoint::select_for_checkpoint;
use scar_core::params::{diff_norm, restrict, UnitGroup};
use scar_core::{
    CheckpointPolicy, NormMetric, ParameterState, ParameterUnit, PerturbationLedger, RunningCheckpoint, Selection,
};

fn state(values: &[Vec<f64>]) -> ParameterState {
    let units = values
        .iter()
        .enumerate()
        .map(|(i, v)| ParameterUnit::new(i as u64, UnitGroup::MlrRow, v.clone()))
        .collect();
    ParameterState::new(0, units).unwrap()
}

type Values = Vec<Vec<f64>>;

/// Three states of the same shape: 1 to 12 units of 1 to 4 values.
fn triple() -> impl Strategy<Value = (Values, Values, Values)> {
    prop::collection::vec(1usize..=4, 1..=12).prop_flat_map(|dims| {
        let one = dims
            .iter()
            .map(|&d| prop::collection::vec(-1e3..1e3f64, d))
            .collect::<Vec<_>>();
        (one.clone(), one.clone(), one)
    })
}

fn metrics(n: usize) -> Vec<NormMetric> {
    vec![
        NormMetric::euclidean(),
        NormMetric::scaled_tv((0..n as u64).map(|i| (i, 1.0 + i as f64))).unwrap(),
    ]
}

proptest! {
    #[test]
    fn norms_are_metrics((a, b, c) in triple()) {
        let (a, b, c) = (state(&a), state(&b), state(&c));
        for m in metrics(a.len()) {
            let ab = diff_norm(&a, &b, &m).unwrap();
            prop_assert_eq!(diff_norm(&a, &a, &m).unwrap(), 0.0);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, diff_norm(&b, &a, &m).unwrap());
            let via = diff_norm(&a, &c, &m).unwrap() + diff_norm(&c, &b, &m).unwrap();
            prop_assert!(ab <= via * (1.0 + 1e-12) + 1e-9);
        }
    }

    #[test]
    fn euclidean_splits_over_a_unit_partition((a, b, _) in triple(), mask in prop::collection::vec(any::<bool>(), 12)) {
        let (a, b) = (state(&a), state(&b));
        let m = NormMetric::euclidean();
        let inside: BTreeSet<u64> = a.unit_ids().filter(|&id| mask[id as usize]).collect();
        let outside: BTreeSet<u64> = a.unit_ids().filter(|id| !inside.contains(id)).collect();
        let part = |s: &BTreeSet<u64>| diff_norm(&restrict(&a, s).unwrap(), &restrict(&b, s).unwrap(), &m).unwrap().powi(2);
        let whole = diff_norm(&a, &b, &m).unwrap().powi(2);
        prop_assert!((part(&inside) + part(&outside) - whole).abs() <= 1e-9 * whole.max(1.0));
    }

    #[test]
    fn priority_saves_the_units_that_moved_most(
        (saved, live, _) in triple(),
        exponent in 0u32..4,
    ) {
        let (saved, live) = (state(&saved), state(&live));
        let ratio = 0.5f64.powi(exponent as i32);
        let policy = CheckpointPolicy::new(1, ratio, Selection::Priority).unwrap();
        let ckpt = RunningCheckpoint::initialize(&saved, LogSink::memory(), None).unwrap();
        let chosen = select_for_checkpoint(&live, &ckpt, &policy, &NormMetric::euclidean(), &mut 0, 0).unwrap();

        let mut moved: Vec<(f64, u64)> = live
            .units()
            .iter()
            .zip(saved.units())
            .map(|(l, s)| {
                let d: f64 = l.values.iter().zip(&s.values).map(|(x, y)| (x - y).powi(2)).sum();
                (d, l.unit_id)
            })
            .collect();
        moved.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let count = ((ratio * live.len() as f64).ceil() as usize).max(1);
        let expected: BTreeSet<u64> = moved.iter().take(count).map(|m| m.1).collect();
        prop_assert_eq!(chosen, expected);
    }

    #[test]
    fn ledger_order_does_not_matter(
        norms in prop::collection::btree_map(0u64..200, 0.0..10.0f64, 0..20),
        c in 0.5..0.99f64,
        seed in any::<u64>(),
    ) {
        let sorted: Vec<(u64, f64)> = norms.into_iter().collect();
        let mut shuffled = sorted.clone();
        let k = shuffled.len().max(1);
        shuffled.rotate_left(seed as usize % k);
        if seed % 2 == 1 {
            shuffled.reverse();
        }
        let a = PerturbationLedger::from_norms(c, sorted.clone()).unwrap();
        let b = PerturbationLedger::from_norms(c, shuffled).unwrap();
        prop_assert_eq!(a.entries(), b.entries());
        let total = bounds::delta_t(&a).unwrap();
        prop_assert_eq!(total.to_bits(), bounds::delta_t(&b).unwrap().to_bits());
        let direct: f64 = sorted.iter().map(|&(l, v)| c.powf(-(l as f64)) * v).sum();
        prop_assert!((total - direct).abs() <= 1e-9 * direct.max(1.0));
    }

    #[test]
    fn replay_reproduces_the_records(
        (first, second, third) in triple(),
        picks in prop::collection::vec(prop::collection::btree_set(0u64..12, 1..6), 2),
    ) {
        let states = [state(&first), state(&second), state(&third)];
        let mut ckpt = RunningCheckpoint::initialize(&states[0], LogSink::memory(), None).unwrap();
        for (s, pick) in states[1..].iter().zip(&picks) {
            let chosen: BTreeSet<u64> = pick.iter().copied().filter(|&id| (id as usize) < s.len()).collect();
            ckpt.save(s, &chosen).unwrap();
        }
        prop_assert_eq!(&ckpt.replay().unwrap(), ckpt.records());
    }
}

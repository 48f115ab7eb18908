use std::collections::BTreeSet;

use pirate::netsim::NodeId;
use pirate::sharding::{cuckoo_reassign, form_committees, leave, run_churn, ChurnScenario};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ids(n: usize) -> Vec<NodeId> {
    (0..n as u32).map(NodeId).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn formation_partitions_the_nodes(k in 1usize..8, c in 1usize..12, seed in any::<u64>()) {
        let nodes = ids(k * c);
        let a = form_committees(&nodes, c, seed).unwrap();
        a.validate().unwrap();
        prop_assert_eq!(a.committee_count(), k);
        let seen: BTreeSet<NodeId> = a.members().collect();
        prop_assert_eq!(seen, nodes.into_iter().collect::<BTreeSet<_>>());
    }

    #[test]
    fn cuckoo_restores_a_valid_partition(k in 2usize..6, c in 2usize..10, evict in 0usize..4, seed in any::<u64>()) {
        let mut a = form_committees(&ids(k * c), c, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gone = NodeId((seed % (k * c) as u64) as u32);
        prop_assert!(leave(&mut a, gone));
        let joiner = NodeId(10_000);
        let b = cuckoo_reassign(&a, joiner, evict, &mut rng).unwrap();
        b.validate().unwrap();
        prop_assert!(b.committee_of(joiner).is_some());
        prop_assert!(b.committee_of(gone).is_none());
        prop_assert_eq!(b.node_count(), k * c);
    }
}

#[test]
fn formation_rejects_indivisible_sizes() {
    assert!(form_committees(&ids(10), 3, 1).is_err());
    assert!(form_committees(&ids(10), 0, 1).is_err());
}

#[test]
fn cuckoo_needs_exactly_one_vacancy() {
    let a = form_committees(&ids(12), 4, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(cuckoo_reassign(&a, NodeId(99), 1, &mut rng).is_err());
}

#[test]
fn churn_is_seeded() {
    let s = ChurnScenario {
        n: 200,
        c: 50,
        epochs: 5,
        ..ChurnScenario::default()
    };
    assert_eq!(run_churn(&s, 7).unwrap(), run_churn(&s, 7).unwrap());
}

#[test]
fn reference_churn_stays_mostly_safe() {
    let s = ChurnScenario::default();
    let st = (0..20).map(|seed| run_churn(&s, seed).unwrap()).reduce(|a, b| a.merge(b)).unwrap();
    assert_eq!(st.samples, 20 * 51 * 5);
    assert!(st.safe_rate() >= 0.99, "rate {}", st.safe_rate());
}

use pirate::aggregation::{self, AggregatorKind, AggregatorSpec, Gradient};
use pirate::netsim::NodeId;
use proptest::prelude::*;

fn grads(rows: &[Vec<f64>]) -> Vec<Gradient> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| Gradient::new(r.clone(), 100, NodeId(i as u32), 0).unwrap())
        .collect()
}

fn matrix(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-100.0..100.0f64, d), n)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

/// Independent Krum: enumerate every candidate and every neighbour set.
fn brute_krum(rows: &[Vec<f64>], f: usize) -> usize {
    let n = rows.len();
    let k = n - f - 2;
    let mut best = (f64::INFINITY, 0);
    for i in 0..n {
        let mut d: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum())
            .collect();
        d.sort_by(f64::total_cmp);
        let s: f64 = d.iter().take(k).sum();
        if s < best.0 {
            best = (s, i);
        }
    }
    best.1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mean_is_permutation_invariant(rows in matrix(1..12, 4), seed in any::<u64>()) {
        let g = grads(&rows);
        let mut p = g.clone();
        let k = (seed as usize) % p.len();
        p.rotate_left(k);
        p.reverse();
        let a = aggregation::mean(&g).unwrap();
        let b = aggregation::mean(&p).unwrap();
        prop_assert!(close(&a.values, &b.values, 1e-12));
    }

    #[test]
    fn robust_operators_are_permutation_invariant(rows in matrix(5..12, 3)) {
        let g = grads(&rows);
        let mut p = g.clone();
        p.reverse();
        for spec in [
            AggregatorSpec::multi_krum(1, Some(2)),
            AggregatorSpec::l_nearest(Some(3)),
            AggregatorSpec::detection_weighted(3.0),
        ] {
            let a = aggregation::aggregate(&spec, &g).unwrap().gradient;
            let b = aggregation::aggregate(&spec, &p).unwrap().gradient;
            prop_assert!(close(&a.values, &b.values, 1e-9), "{:?}", spec.kind);
        }
    }

    #[test]
    fn krum_matches_brute_force(rows in matrix(4..11, 3), f in 0usize..3) {
        prop_assume!(rows.len() >= f + 3);
        let g = grads(&rows);
        let out = aggregation::krum(&g, f).unwrap();
        let want = brute_krum(&rows, f);
        // ties may pick a different index with an equal score; compare scores
        let (scores, evals) = aggregation::krum_scores(&g, f).unwrap();
        let got = rows.iter().position(|r| r == &out.values).unwrap();
        prop_assert!((scores[got] - scores[want]).abs() <= 1e-9 * (1.0 + scores[want]));
        prop_assert_eq!(evals, rows.len() * (rows.len() - 1) / 2);
    }

    #[test]
    fn outputs_stay_in_coordinate_hull(rows in matrix(3..10, 3)) {
        let g = grads(&rows);
        for kind in [AggregatorKind::Mean, AggregatorKind::LNearest, AggregatorKind::DetectionWeighted] {
            let out = aggregation::aggregate(&AggregatorSpec::of(kind), &g).unwrap().gradient;
            for k in 0..3 {
                let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.values[k] >= lo - 1e-9 && out.values[k] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn detection_weights_follow_scores(rows in matrix(2..10, 3), threshold in 0.5..5.0f64) {
        let g = grads(&rows);
        let (_, w) = aggregation::detection_weighted(&g, threshold).unwrap();
        for (i, gi) in g.iter().enumerate() {
            let s = aggregation::anomaly_score(gi, &g).unwrap();
            let expect = if s > threshold { 0.0 } else { 1.0 / (1.0 + s) };
            prop_assert!((w[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_inputs_aggregate_to_themselves(v in prop::collection::vec(-10.0..10.0f64, 3), n in 3usize..9) {
        let rows = vec![v.clone(); n];
        let g = grads(&rows);
        for spec in [
            AggregatorSpec::mean(),
            AggregatorSpec::krum(0),
            AggregatorSpec::multi_krum(0, None),
            AggregatorSpec::l_nearest(None),
            AggregatorSpec::detection_weighted(3.0),
        ] {
            let out = aggregation::aggregate(&spec, &g).unwrap().gradient;
            prop_assert!(close(&out.values, &v, 1e-12), "{:?}", spec.kind);
        }
    }
}

#[test]
fn l_nearest_and_detection_are_linear_in_distance_work() {
    let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 1.0]).collect();
    let g = grads(&rows);
    let ln = aggregation::aggregate(&AggregatorSpec::l_nearest(None), &g).unwrap();
    let dw = aggregation::aggregate(&AggregatorSpec::detection_weighted(3.0), &g).unwrap();
    let kr = aggregation::aggregate(&AggregatorSpec::krum(5), &g).unwrap();
    assert_eq!(ln.distance_evals, 40);
    assert_eq!(dw.distance_evals, 40);
    assert_eq!(kr.distance_evals, 40 * 39 / 2);
}

#[test]
fn one_crafted_input_steers_the_mean_but_not_multi_krum() {
    let mut rows: Vec<Vec<f64>> = (0..9).map(|i| vec![1.0 + 0.01 * i as f64, -1.0]).collect();
    let honest_sum: Vec<f64> = (0..2).map(|k| rows.iter().map(|r| r[k]).sum()).collect();
    let target = [50.0, 50.0];
    rows.push((0..2).map(|k| 10.0 * target[k] - honest_sum[k]).collect());
    let g = grads(&rows);
    let mean = aggregation::mean(&g).unwrap();
    assert!(close(&mean.values, &target, 1e-12));
    let mk = aggregation::multi_krum(&g, 1, 8).unwrap();
    assert!(mk.values[0] < 2.0 && mk.values[1] < 0.0);
}

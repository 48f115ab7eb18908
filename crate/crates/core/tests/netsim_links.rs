use pirate::netsim::{EventKind, LinkProfile, Network, NodeId, Simulation};
use proptest::prelude::*;

fn sim(ups: &[f64]) -> Simulation<u32> {
    let links = ups.iter().map(|&u| LinkProfile::new(u, 1000.0, 10.0).unwrap()).collect();
    let mut net = Network::new(links);
    net.record_uplinks(true);
    Simulation::new(net)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A node's uplink intervals never overlap, whatever the send pattern.
    #[test]
    fn uplink_intervals_are_disjoint(
        sends in prop::collection::vec((0u32..5, 0u32..5, 1u64..5_000_000, 0.0..2.0f64), 1..60)
    ) {
        let mut s = sim(&[80.0, 120.0, 160.0, 200.0, 240.0]);
        for (k, &(from, to, _, at)) in sends.iter().enumerate() {
            if from != to {
                s.schedule_timer(at, NodeId(from), "send", k as u32).unwrap();
            }
        }
        let plan = sends.clone();
        s.run_until_idle(None, |sim, ev| {
            if let EventKind::Timer(k) = ev.kind {
                let (from, to, size, _) = plan[k as usize];
                sim.send(NodeId(from), NodeId(to), size, "data", k).unwrap();
            }
        });
        let log = s.network.uplink_log().to_vec();
        for node in 0..5u32 {
            let mut iv: Vec<(f64, f64)> = log.iter().filter(|e| e.0 == NodeId(node)).map(|e| (e.1, e.2)).collect();
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in iv.windows(2) {
                prop_assert!(w[0].1 <= w[1].0 + 1e-12, "node {node}: {:?}", w);
            }
        }
    }

    /// Deliveries arrive in dispatch order for the same (sender, receiver) pair.
    #[test]
    fn links_are_fifo(sizes in prop::collection::vec(1u64..3_000_000, 1..20)) {
        let mut s = sim(&[80.0, 240.0]);
        for (k, &size) in sizes.iter().enumerate() {
            s.send(NodeId(0), NodeId(1), size, "data", k as u32).unwrap();
        }
        let mut seen = Vec::new();
        s.run_until_idle(None, |_, ev| {
            if let EventKind::Delivery { msg, .. } = ev.kind {
                seen.push(msg);
            }
        });
        prop_assert_eq!(seen, (0..sizes.len() as u32).collect::<Vec<_>>());
    }
}

#[test]
fn broadcast_serializes_on_the_sender_uplink() {
    let mut s = sim(&[80.0, 80.0, 80.0, 80.0]);
    let receivers = [NodeId(1), NodeId(2), NodeId(3)];
    let times = s.broadcast(NodeId(0), &receivers, 28_000_000, "grad", 0).unwrap();
    // 2.8 s of uplink each, then 10 ms latency and 0.224 s of downlink
    for (i, t) in times.iter().enumerate() {
        let expected = 2.8 * (i as f64 + 1.0) + 0.01 + 0.224;
        assert!((t - expected).abs() < 1e-9, "{t} vs {expected}");
    }
}

#[test]
fn shared_downlink_queues_concurrent_senders() {
    let mut s = sim(&[240.0, 240.0, 80.0]);
    let a = s.send(NodeId(0), NodeId(2), 28_000_000, "a", 0).unwrap();
    let b = s.send(NodeId(1), NodeId(2), 28_000_000, "b", 1).unwrap();
    assert!((b - a - 0.224).abs() < 1e-9);
}

#[test]
fn same_schedule_same_trace() {
    let run = || {
        let mut s = sim(&[80.0, 160.0, 240.0]);
        for k in 0..10u32 {
            s.schedule_timer(0.1 * k as f64, NodeId(k % 3), "t", k).unwrap();
        }
        s.run_until_idle(None, |sim, ev| {
            if let EventKind::Timer(k) = ev.kind {
                let to = NodeId((ev.target.0 + 1) % 3);
                sim.send(ev.target, to, 1_000_000 + k as u64, "d", k).unwrap();
            }
        });
        s.trace_digest()
    };
    assert_eq!(run(), run());
}

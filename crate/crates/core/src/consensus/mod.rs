//! Per-committee chained BFT agreement over partial aggregation steps.

mod replica;
mod types;

pub use replica::*;
pub use types::*;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{AggregatorSpec, Gradient};
    use crate::allreduce::RingSchedule;
    use crate::netsim::NodeId;

    fn members(c: u32) -> Vec<NodeId> {
        (0..c).map(NodeId).collect()
    }

    fn qc_for(b: &Block, signers: &[u32]) -> QuorumCertificate {
        QuorumCertificate {
            committee: b.committee,
            view: b.view,
            block_hash: b.hash,
            signers: signers.iter().copied().map(NodeId).collect(),
        }
    }

    fn empty_on(parent: &Block, view: u64, m: &[NodeId]) -> Block {
        Block::new(0, view, parent.hash, qc_for(parent, &[0, 1, 2]), None, leader_of(m, view))
    }

    fn replica(c: u32) -> ReplicaState {
        let s = RingSchedule::new(c as usize, 1, c as usize).unwrap();
        ReplicaState::new(NodeId(1), 0, members(c), s, c as usize, 0)
    }

    fn first_block(m: &[NodeId], view: u64) -> Block {
        Block::new(0, view, genesis_hash(0), QuorumCertificate::genesis(0), None, leader_of(m, view))
    }

    #[test]
    fn commit_rule_needs_consecutive_direct_chain() {
        let m = members(4);
        let b5 = first_block(&m, 5);
        let b6 = empty_on(&b5, 6, &m);
        let b7 = empty_on(&b6, 7, &m);
        assert_eq!(commit_rule(&b5, &b6, &b7), Some(b5.hash));
        let b8 = empty_on(&b6, 8, &m);
        assert_eq!(commit_rule(&b5, &b6, &b8), None);
    }

    #[test]
    fn replica_commits_on_three_chain() {
        let m = members(4);
        let mut r = replica(4);
        let b1 = first_block(&m, 1);
        let b2 = empty_on(&b1, 2, &m);
        let b3 = empty_on(&b2, 3, &m);
        let b4 = empty_on(&b3, 4, &m);
        for b in [&b1, &b2, &b3] {
            assert!(r.accept(b).is_empty());
        }
        assert_eq!(r.locked_qc.block_hash, b1.hash);
        let c = r.accept(&b4);
        assert_eq!(c.iter().map(|b| b.hash).collect::<Vec<_>>(), vec![b1.hash]);
    }

    #[test]
    fn safety_rule_rejects_conflicting_branch() {
        let m = members(4);
        let mut r = replica(4);
        let b1 = first_block(&m, 1);
        let b2 = empty_on(&b1, 2, &m);
        let b3 = empty_on(&b2, 3, &m);
        for b in [&b1, &b2, &b3] {
            r.accept(b);
        }
        // locked on b1; a fork off genesis justified by an older QC is unsafe
        let fork = first_block(&m, 5);
        let spec = AggregatorSpec::mean();
        let ctx = ValidationContext {
            spec: &spec,
            committees: std::slice::from_ref(&m),
            model_digest: &|_| Some(Digest::ZERO),
            gossip: &|_, _| None,
        };
        assert_eq!(r.validate(&fork, &ctx), Validation::Reject(RejectReason::SafetyRule));
        let ok = empty_on(&b3, 5, &m);
        assert!(matches!(r.validate(&ok, &ctx), Validation::Vote(_)));
    }

    #[test]
    fn payload_validation_recomputes_result() {
        let m = members(4);
        let r = replica(4);
        let grads: Vec<Gradient> = (0..4)
            .map(|i| Gradient::new(vec![i as f64, 1.0], 8, NodeId(i), 0).unwrap())
            .collect();
        let digests: Vec<Digest> = grads.iter().map(gradient_digest).collect();
        let spec = AggregatorSpec::mean();
        let out = crate::allreduce::fold_step(&spec, &grads, None).unwrap();
        let mut payload = StepPayload {
            iteration: 0,
            round: 0,
            token: 0,
            kind: StepKind::Reduce,
            selection: grads.clone(),
            neighbor: None,
            result: out.token.value.clone(),
            result_count: 4,
            weights: out.selection_weights.clone(),
            model_digest: Digest::ZERO,
        };
        let gossip = |n: NodeId, _| Some(digests[n.index()]);
        let ctx = ValidationContext {
            spec: &spec,
            committees: std::slice::from_ref(&m),
            model_digest: &|_| Some(Digest::ZERO),
            gossip: &gossip,
        };
        let mk = |p: StepPayload| Block::new(0, 1, genesis_hash(0), QuorumCertificate::genesis(0), Some(p), leader_of(&m, 1));
        assert!(matches!(r.validate(&mk(payload.clone()), &ctx), Validation::Vote(_)));
        payload.result.values[0] += 1.0;
        assert_eq!(r.validate(&mk(payload.clone()), &ctx), Validation::Reject(RejectReason::AggregationMismatch));
        payload.result = out.token.value.clone();
        payload.model_digest = params_digest(&[1.0]);
        assert_eq!(r.validate(&mk(payload.clone()), &ctx), Validation::Reject(RejectReason::ModelDigestMismatch));
        let no_gossip = ValidationContext {
            gossip: &|_, _| None,
            model_digest: &|_| Some(params_digest(&[1.0])),
            ..ctx
        };
        assert_eq!(r.validate(&mk(payload), &no_gossip), Validation::Defer);
    }

    #[test]
    fn vote_collector_forms_one_qc() {
        let m = members(4);
        let mut vc = VoteCollector::new();
        let h = genesis_hash(9);
        let v = |i| Vote {
            committee: 0,
            voter: NodeId(i),
            view: 3,
            block_hash: h,
        };
        assert!(vc.add(0, &m, &v(0)).is_none());
        assert!(vc.add(0, &m, &v(0)).is_none());
        assert!(vc.add(0, &m, &v(9)).is_none());
        assert!(vc.add(0, &m, &v(1)).is_none());
        let qc = vc.add(0, &m, &v(2)).unwrap();
        assert_eq!(qc.signers.len(), 3);
        assert!(qc.verify(&m));
        assert!(vc.add(0, &m, &v(3)).is_none());
    }

    #[test]
    fn timeout_scales_with_payload() {
        let t = default_view_timeout(50, 28_000_000, 80.0, 0.01);
        assert!((t - 4.0 * 49.0 * 28e6 * 8.0 / 80e6 - 0.08).abs() < 1e-9);
    }
}

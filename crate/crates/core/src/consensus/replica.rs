use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::types::*;
use crate::aggregation::AggregatorSpec;
use crate::allreduce::{fold_step, selection_indices, Phase, RingSchedule, Token};
use crate::netsim::NodeId;

/// Maximum validation sets a replica may retain at once.
pub const MAX_RETAINED_SETS: usize = 4;
/// Payloads per retained set: own gradient, component 2, component 3.
pub const MAX_SET_PAYLOADS: usize = 3;

const RESULT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BadHash,
    WrongCommittee,
    NotLeader,
    StaleView,
    UnknownParent,
    BadJustify,
    SafetyRule,
    WrongStep,
    ModelDigestMismatch,
    MissingNeighbor,
    InvalidNeighbor,
    SelectionMismatch,
    AggregationMismatch,
    PipelineFull,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Validation {
    Vote(Vote),
    Reject(RejectReason),
    /// Missing local inputs (model, gossip); retry once they arrive.
    Defer,
}

/// External facts a replica checks a proposal against.
pub struct ValidationContext<'a> {
    pub spec: &'a AggregatorSpec,
    pub committees: &'a [Vec<NodeId>],
    /// Digest of this replica's model at the start of an iteration, if reached.
    pub model_digest: &'a dyn Fn(u64) -> Option<Digest>,
    /// Digest of the gradient a member gossiped for an iteration, if received.
    pub gossip: &'a dyn Fn(NodeId, u64) -> Option<Digest>,
}

/// One block's inputs retained until commit or abandonment.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationSet {
    pub block: Digest,
    pub view: u64,
    pub payloads: usize,
    pub bytes: u64,
}

/// Chained-HotStuff replica state for one committee member.
#[derive(Clone, Debug)]
pub struct ReplicaState {
    pub id: NodeId,
    pub committee: usize,
    pub members: Vec<NodeId>,
    pub schedule: RingSchedule,
    pub gradients_per_step: usize,
    /// First iteration this chain serves.
    pub start_iteration: u64,
    pub last_voted_view: u64,
    pub locked_qc: QuorumCertificate,
    pub high_qc: QuorumCertificate,
    blocks: HashMap<Digest, Block>,
    /// Certificate for a block, taken from the justify of any child.
    child_qc: HashMap<Digest, QuorumCertificate>,
    committed_tip: Digest,
    committed_view: u64,
    /// Certificate whose three-chain produced the latest commit.
    pub commit_qc: QuorumCertificate,
    pub committed: Vec<Digest>,
    pub sets: Vec<ValidationSet>,
    pub peak_sets: usize,
    pub peak_payloads: usize,
}

impl ReplicaState {
    pub fn new(
        id: NodeId,
        committee: usize,
        members: Vec<NodeId>,
        schedule: RingSchedule,
        gradients_per_step: usize,
        start_iteration: u64,
    ) -> Self {
        let genesis = QuorumCertificate::genesis(committee);
        ReplicaState {
            id,
            committee,
            members,
            schedule,
            gradients_per_step,
            start_iteration,
            last_voted_view: 0,
            locked_qc: genesis.clone(),
            commit_qc: genesis.clone(),
            high_qc: genesis,
            blocks: HashMap::new(),
            child_qc: HashMap::new(),
            committed_tip: genesis_hash(committee),
            committed_view: 0,
            committed: Vec::new(),
            sets: Vec::new(),
            peak_sets: 0,
            peak_payloads: 0,
        }
    }

    pub fn leader_of(&self, view: u64) -> NodeId {
        leader_of(&self.members, view)
    }

    pub fn block(&self, hash: &Digest) -> Option<&Block> {
        self.blocks.get(hash)
    }

    pub fn is_genesis(&self, hash: &Digest) -> bool {
        *hash == genesis_hash(self.committee)
    }

    pub fn committed_tip(&self) -> Digest {
        self.committed_tip
    }

    /// Stores a block for ancestry lookups without voting on it.
    pub fn insert_block(&mut self, block: Block) {
        if block.justify.block_hash == block.parent && !block.justify.is_genesis() {
            self.child_qc.entry(block.parent).or_insert_with(|| block.justify.clone());
        }
        self.blocks.entry(block.hash).or_insert(block);
    }

    /// A known certificate for `hash`, if some stored child carries one.
    pub fn qc_for(&self, hash: &Digest) -> Option<&QuorumCertificate> {
        self.child_qc.get(hash)
    }

    /// Records a certificate formed locally from votes.
    pub fn record_qc(&mut self, qc: &QuorumCertificate) {
        self.child_qc.entry(qc.block_hash).or_insert_with(|| qc.clone());
    }

    /// Whether `hash` equals or descends from `ancestor`.
    pub fn extends(&self, hash: &Digest, ancestor: &Digest) -> bool {
        let mut cur = *hash;
        loop {
            if cur == *ancestor {
                return true;
            }
            match self.blocks.get(&cur) {
                Some(b) => cur = b.parent,
                None => return false,
            }
        }
    }

    fn ancestor_view(&self, hash: &Digest) -> u64 {
        self.blocks.get(hash).map_or(0, |b| b.view)
    }

    /// First block missing on the walk from `hash` back to the committed tip.
    pub fn missing_ancestor(&self, hash: &Digest) -> Option<Digest> {
        let mut cur = *hash;
        while cur != self.committed_tip && !self.is_genesis(&cur) {
            match self.blocks.get(&cur) {
                Some(b) if b.view <= self.committed_view => return None,
                Some(b) => cur = b.parent,
                None => return Some(cur),
            }
        }
        None
    }

    /// Latest (iteration, round) committed to on the branch ending at `tip`.
    pub fn last_step_on_branch(&self, tip: &Digest) -> Option<(u64, usize)> {
        let mut cur = *tip;
        while let Some(b) = self.blocks.get(&cur) {
            if let Some(p) = &b.payload {
                return Some((p.iteration, p.round));
            }
            cur = b.parent;
        }
        None
    }

    /// Step the next payload block extending `tip` must carry.
    pub fn next_step(&self, tip: &Digest) -> (u64, usize) {
        match self.last_step_on_branch(tip) {
            None => (self.start_iteration, 0),
            Some((it, r)) if r + 1 < self.schedule.total_rounds() => (it, r + 1),
            Some((it, _)) => (it + 1, 0),
        }
    }

    /// Payload blocks between `tip` and the committed tip.
    pub fn uncommitted_payloads(&self, tip: &Digest) -> usize {
        let mut cur = *tip;
        let mut n = 0;
        while cur != self.committed_tip {
            match self.blocks.get(&cur) {
                Some(b) => {
                    if b.view <= self.committed_view {
                        break;
                    }
                    n += b.payload.is_some() as usize;
                    cur = b.parent;
                }
                None => break,
            }
        }
        n
    }

    /// Members whose local gradients form `round`'s selection.
    pub fn selection_members(&self, round: usize) -> &[NodeId] {
        if self.schedule.phase(round) == Phase::Gather {
            return &[];
        }
        &self.members[selection_indices(self.members.len(), self.gradients_per_step, round)]
    }

    pub fn validate(&self, block: &Block, ctx: &ValidationContext<'_>) -> Validation {
        use RejectReason::*;
        let reject = Validation::Reject;
        if !block.hash_is_valid() {
            return reject(BadHash);
        }
        if block.committee != self.committee || block.justify.committee != self.committee {
            return reject(WrongCommittee);
        }
        if block.proposer != self.leader_of(block.view) {
            return reject(NotLeader);
        }
        if block.view <= self.last_voted_view || block.view <= block.justify.view {
            return reject(StaleView);
        }
        if !block.justify.verify(&self.members) || block.parent != block.justify.block_hash {
            return reject(BadJustify);
        }
        if !self.is_genesis(&block.parent) && !self.blocks.contains_key(&block.parent) {
            return reject(UnknownParent);
        }
        let safe = self.extends(&block.parent, &self.locked_qc.block_hash) || block.justify.view > self.locked_qc.view;
        if !safe {
            return reject(SafetyRule);
        }
        let Some(p) = &block.payload else {
            return Validation::Vote(self.vote_for(block));
        };

        let (it, round) = self.next_step(&block.parent);
        let kind = match self.schedule.phase(round) {
            Phase::Reduce => StepKind::Reduce,
            Phase::Gather => StepKind::Gather,
        };
        if p.iteration != it || p.round != round || p.kind != kind || p.token != self.schedule.token(self.committee, round) {
            return reject(WrongStep);
        }
        match (ctx.model_digest)(it) {
            None => return Validation::Defer,
            Some(d) if d != p.model_digest => return reject(ModelDigestMismatch),
            Some(_) => {}
        }

        let carried = match self.schedule.input_from(self.committee, round) {
            None => {
                if p.neighbor.is_some() {
                    return reject(InvalidNeighbor);
                }
                None
            }
            Some(src) => {
                let Some(n) = &p.neighbor else {
                    return reject(MissingNeighbor);
                };
                let Some(src_members) = ctx.committees.get(src) else {
                    return reject(InvalidNeighbor);
                };
                if n.source_committee != src || n.iteration != it || n.round + 1 != round || !n.verify(src_members) {
                    return reject(InvalidNeighbor);
                }
                Some(Token {
                    value: n.value.clone(),
                    count: n.count,
                })
            }
        };

        let expected = self.selection_members(round);
        if p.selection.len() != expected.len() {
            return reject(SelectionMismatch);
        }
        for (g, &m) in p.selection.iter().zip(expected) {
            if g.origin != m || g.iteration != it {
                return reject(SelectionMismatch);
            }
            match (ctx.gossip)(m, it) {
                None => return Validation::Defer,
                Some(d) if d != gradient_digest(g) => return reject(SelectionMismatch),
                Some(_) => {}
            }
        }

        match kind {
            StepKind::Gather => {
                let Some(t) = carried else {
                    return reject(MissingNeighbor);
                };
                if p.result != t.value || p.result_count != t.count {
                    return reject(AggregationMismatch);
                }
            }
            StepKind::Reduce => {
                let Ok(out) = fold_step(ctx.spec, &p.selection, carried.as_ref()) else {
                    return reject(AggregationMismatch);
                };
                if out.token.count != p.result_count
                    || !close(&out.token.value.values, &p.result.values)
                    || !close(&out.selection_weights, &p.weights)
                {
                    return reject(AggregationMismatch);
                }
            }
        }

        let live_sets = self.sets.iter().filter(|s| self.extends(&block.parent, &s.block)).count();
        if live_sets >= MAX_RETAINED_SETS {
            return reject(PipelineFull);
        }
        Validation::Vote(self.vote_for(block))
    }

    fn vote_for(&self, block: &Block) -> Vote {
        Vote {
            committee: self.committee,
            voter: self.id,
            view: block.view,
            block_hash: block.hash,
        }
    }

    /// Records a block this replica voted for (or proposed) and runs the
    /// chained-HotStuff update on its justify certificate. Returns newly
    /// committed blocks in chain order.
    pub fn accept(&mut self, block: &Block) -> Vec<Block> {
        self.insert_block(block.clone());
        self.last_voted_view = self.last_voted_view.max(block.view);
        // sets off this branch belong to abandoned forks
        let tip = block.hash;
        let keep: Vec<bool> = self.sets.iter().map(|s| self.extends(&tip, &s.block)).collect();
        let mut i = 0;
        self.sets.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        if let Some(p) = &block.payload {
            let own = p.selection.iter().any(|g| g.origin == self.id) as usize;
            let payloads = own + p.neighbor.is_some() as usize + 1;
            let bytes = p.result.payload_bytes * payloads as u64;
            self.sets.push(ValidationSet {
                block: block.hash,
                view: block.view,
                payloads,
                bytes,
            });
        }
        let out = self.process_qc(&block.justify);
        self.peak_sets = self.peak_sets.max(self.sets.len());
        self.peak_payloads = self.peak_payloads.max(self.retained_payloads());
        out
    }

    /// Updates the high and locked certificates for a new QC and applies the
    /// three-chain commit rule.
    /// Replays the certificates carried by the uncommitted blocks below `qc`,
    /// oldest first, then `qc` itself. Catches commits whose blocks arrived late.
    pub fn process_qc_chain(&mut self, qc: &QuorumCertificate) -> Vec<Block> {
        let mut carried = Vec::new();
        let mut cur = qc.block_hash;
        while let Some(b) = self.blocks.get(&cur) {
            if b.view <= self.committed_view {
                break;
            }
            carried.push(b.justify.clone());
            cur = b.parent;
        }
        let mut out = Vec::new();
        for q in carried.iter().rev() {
            out.extend(self.process_qc(q));
        }
        out.extend(self.process_qc(qc));
        out
    }

    pub fn process_qc(&mut self, qc: &QuorumCertificate) -> Vec<Block> {
        if qc.view > self.high_qc.view {
            self.high_qc = qc.clone();
        }
        let Some(b2) = self.blocks.get(&qc.block_hash).cloned() else {
            return Vec::new();
        };
        if b2.justify.view > self.locked_qc.view {
            self.locked_qc = b2.justify.clone();
        }
        let Some(b1) = self.blocks.get(&b2.justify.block_hash).cloned() else {
            return Vec::new();
        };
        let Some(b0) = self.blocks.get(&b1.justify.block_hash).cloned() else {
            return Vec::new();
        };
        let chained = b2.parent == b1.hash && b1.parent == b0.hash && b2.view == b1.view + 1 && b1.view == b0.view + 1;
        if !chained || b0.view <= self.committed_view {
            return Vec::new();
        }
        let out = self.commit_through(b0.hash);
        if !out.is_empty() {
            self.commit_qc = qc.clone();
        }
        out
    }

    fn commit_through(&mut self, hash: Digest) -> Vec<Block> {
        let mut chain = Vec::new();
        let mut cur = hash;
        while cur != self.committed_tip {
            // an ancestor is still missing; commit once it has been fetched
            let Some(b) = self.blocks.get(&cur) else { return Vec::new() };
            if b.view <= self.committed_view {
                break;
            }
            chain.push(b.clone());
            cur = b.parent;
        }
        chain.reverse();
        for b in &chain {
            self.committed.push(b.hash);
        }
        if let Some(last) = chain.last() {
            self.committed_tip = last.hash;
            self.committed_view = last.view;
        }
        let committed: Vec<Digest> = chain.iter().map(|b| b.hash).collect();
        self.sets.retain(|s| !committed.contains(&s.block));
        chain
    }

    pub fn retained_payloads(&self) -> usize {
        self.sets.iter().map(|s| s.payloads).sum()
    }

    pub fn retained_bytes(&self) -> u64 {
        self.sets.iter().map(|s| s.bytes).sum()
    }

    /// Whether the block at `view` has been committed on this replica.
    pub fn committed_view(&self) -> u64 {
        self.committed_view
    }

    pub fn is_committed(&self, hash: &Digest) -> bool {
        self.committed.contains(hash)
    }

    pub fn view_of(&self, hash: &Digest) -> u64 {
        self.ancestor_view(hash)
    }
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= RESULT_TOLERANCE)
}

/// Round-robin leader of `view`.
/// Pseudo-random rotation: a fixed round-robin would let the step cadence
/// pin every payload proposal onto the same member.
pub fn leader_of(members: &[NodeId], view: u64) -> NodeId {
    let mut z = view.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    members[(z % members.len() as u64) as usize]
}

/// Three-chain commit check over explicit blocks `b <- b' <- b''`: returns the
/// hash of `b` when the links are direct and the views consecutive.
pub fn commit_rule(b: &Block, b1: &Block, b2: &Block) -> Option<Digest> {
    let direct = b2.parent == b1.hash && b1.parent == b.hash;
    let consecutive = b1.view == b.view + 1 && b2.view == b1.view + 1;
    (direct && consecutive).then_some(b.hash)
}

/// Accumulates votes for one committee and emits a QC at quorum.
#[derive(Clone, Debug, Default)]
pub struct VoteCollector {
    pending: HashMap<(u64, Digest), std::collections::BTreeSet<NodeId>>,
    formed: std::collections::HashSet<(u64, Digest)>,
}

impl VoteCollector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a vote; returns the certificate the first time quorum is reached.
    /// Votes from non-members or for another committee are ignored.
    pub fn add(&mut self, committee: usize, members: &[NodeId], vote: &Vote) -> Option<QuorumCertificate> {
        if vote.committee != committee || !members.contains(&vote.voter) {
            return None;
        }
        let key = (vote.view, vote.block_hash);
        if self.formed.contains(&key) {
            return None;
        }
        let signers = self.pending.entry(key).or_default();
        signers.insert(vote.voter);
        if signers.len() >= quorum(members.len()) {
            let signers = self.pending.remove(&key).unwrap_or_default();
            self.formed.insert(key);
            return Some(QuorumCertificate {
                committee,
                view: vote.view,
                block_hash: vote.block_hash,
                signers,
            });
        }
        None
    }

    /// Drops bookkeeping for views at or below `view`.
    pub fn prune(&mut self, view: u64) {
        self.pending.retain(|(v, _), _| *v > view);
        self.formed.retain(|(v, _)| *v > view);
    }
}

/// View timeout: four times the time the slowest member needs to push one
/// payload to every peer.
/// Four slowest full-committee broadcasts plus eight one-way latencies.
pub fn default_view_timeout(c: usize, payload_bytes: u64, slowest_uplink_mbps: f64, latency_s: f64) -> f64 {
    let bits = (c.saturating_sub(1) as f64) * payload_bytes as f64 * 8.0;
    (4.0 * bits / (slowest_uplink_mbps * 1e6) + 8.0 * latency_s).max(1e-3)
}

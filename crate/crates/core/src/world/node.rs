use rand::Rng;

use super::World;
use crate::adversary::{self, OmniscientView};
use crate::aggregation::Gradient;
use crate::allreduce::{fold_step, selection_indices, Phase, RingState, Token};
use crate::consensus::*;
use crate::netsim::{EventKind, NodeId, SimEvent, Simulation};
use crate::sharding::StrategyTag;
use crate::training::{apply_update, UpdateOutcome};

#[derive(Clone, Debug)]
pub enum Msg {
    Gossip(Gradient),
    Proposal(Box<Block>),
    Vote(Vote),
    NewView { view: u64, high_qc: QuorumCertificate, committed_view: u64 },
    Handoff(Box<CertifiedAggregation>),
    HandoffQuery { iteration: u64, round: usize },
    ViewTimer { view: u64 },
    HandoffTimer { iteration: u64, round: usize },
    GradientReady { iteration: u64 },
    FetchBlock(Digest),
    /// A newer certificate pushed to a member that reported a stale one.
    SyncQc(QuorumCertificate),
    BlockReply(Box<Block>),
}

/// Message stamped with the reconfiguration epoch it belongs to.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub epoch: u64,
    pub msg: Msg,
}

type Sim = Simulation<Envelope>;

enum Decision {
    Vote,
    Accept,
    Reject(RejectReason),
    Defer,
    Ignore,
}

impl World {
    fn strategy(&self, id: NodeId) -> Option<StrategyTag> {
        self.nodes[id.index()].byz.as_ref().map(|s| s.kind)
    }

    fn withholds(&self, id: NodeId) -> bool {
        self.strategy(id) == Some(StrategyTag::Withhold)
    }

    fn send(&mut self, sim: &mut Sim, from: NodeId, to: NodeId, size: u64, tag: &'static str, msg: Msg) {
        let env = Envelope { epoch: self.epoch, msg };
        if from == to {
            sim.schedule_delivery(sim.now(), from, to, tag, env).expect("local delivery");
            return;
        }
        let c = &self.cfg.consensus;
        let extra = if sim.now() < c.gst_s && c.pre_gst_jitter_s > 0.0 {
            self.jitter_rng.gen_range(0.0..c.pre_gst_jitter_s)
        } else {
            0.0
        };
        sim.send_with_delay(from, to, size, tag, env, extra).expect("valid transfer");
    }

    fn timer(&mut self, sim: &mut Sim, at: f64, id: NodeId, tag: &'static str, msg: Msg) {
        let env = Envelope { epoch: self.epoch, msg };
        sim.schedule_timer(at, id, tag, env).expect("future timer");
    }

    pub fn handle(&mut self, sim: &mut Sim, ev: SimEvent<Envelope>) {
        let id = ev.target;
        let (from, env) = match ev.kind {
            EventKind::Delivery { from, msg } => (from, msg),
            EventKind::Timer(msg) => (id, msg),
        };
        if env.epoch != self.epoch || self.all_finished() || !self.nodes[id.index()].active {
            return;
        }
        match env.msg {
            Msg::GradientReady { iteration } => self.on_gradient_ready(sim, id, iteration),
            Msg::Gossip(g) => {
                self.nodes[id.index()].gossip.insert((g.origin, g.iteration), g);
                self.progress(sim, id);
            }
            Msg::Proposal(b) => self.on_proposal(sim, id, *b),
            Msg::Vote(v) => self.on_vote(sim, id, v),
            Msg::NewView { view, high_qc, committed_view } => self.on_new_view(sim, id, from, view, high_qc, committed_view),
            Msg::Handoff(cert) => self.on_handoff(sim, id, *cert),
            Msg::HandoffQuery { iteration, round } => {
                if self.withholds(id) {
                    return;
                }
                if let Some(cert) = self.nodes[id.index()].certs_own.get(&(iteration, round)).cloned() {
                    let size = self.cfg.payload_bytes;
                    self.send(sim, id, from, size, "handoff", Msg::Handoff(Box::new(cert)));
                }
            }
            Msg::FetchBlock(hash) => {
                if self.withholds(id) {
                    return;
                }
                if let Some(b) = self.nodes[id.index()].replica.block(&hash).cloned() {
                    let size = self.block_size(&b);
                    self.send(sim, id, from, size, "block-reply", Msg::BlockReply(Box::new(b)));
                }
            }
            Msg::BlockReply(b) => self.on_block_reply(sim, id, from, *b),
            Msg::SyncQc(qc) => self.on_sync_qc(sim, id, from, qc),
            Msg::ViewTimer { view } => self.on_view_timer(sim, id, view),
            Msg::HandoffTimer { iteration, round } => self.on_handoff_timer(sim, id, iteration, round),
        }
    }

    pub fn start_iteration(&mut self, sim: &mut Sim, id: NodeId, iteration: u64) {
        let seed = self.cfg.seed;
        let n = &mut self.nodes[id.index()];
        if let Some(s) = n.byz.as_ref().filter(|s| s.kind == StrategyTag::ContaminateModel) {
            let mut rng = adversary::adversary_rng(seed, id.0, iteration);
            adversary::contaminate_model(&mut n.model, s, &mut rng);
            n.digests.insert(iteration, n.model.digest);
        }
        let at = sim.now() + self.cfg.compute_time_s;
        self.timer(sim, at, id, "compute", Msg::GradientReady { iteration });
    }

    fn on_gradient_ready(&mut self, sim: &mut Sim, id: NodeId, iteration: u64) {
        let n = &self.nodes[id.index()];
        if n.model.iteration != iteration || n.paused {
            return;
        }
        let payload = self.cfg.payload_bytes;
        let honest = self
            .task
            .local_gradient(&n.model, id.index(), id, payload)
            .expect("non-empty shard");
        let g = match n.byz.clone().filter(|s| s.corrupts_gradient()) {
            None => honest,
            Some(s) => {
                let members = self.members(n.committee).to_vec();
                let pos = members.iter().position(|m| *m == id).unwrap_or(0);
                let round = pos / self.gps;
                let sel = &members[selection_indices(members.len(), self.gps, round)];
                let others: Vec<Gradient> = sel
                    .iter()
                    .filter(|m| self.is_honest(**m))
                    .map(|m| self.task.local_gradient(&n.model, m.index(), *m, payload).expect("shard"))
                    .collect();
                let colluders = sel
                    .iter()
                    .filter(|m| self.strategy(**m) == Some(StrategyTag::OmniscientCraft))
                    .count();
                let lr = self.cfg.learning_rate;
                let target: Vec<f64> = n
                    .model
                    .params
                    .iter()
                    .zip(&self.target_params)
                    .map(|(p, t)| (p - t) / lr)
                    .collect();
                let view = OmniscientView {
                    others: &others,
                    colluders,
                    target_mean: &target,
                };
                let grant = (lr > 0.0).then_some(&view);
                let mut rng = adversary::adversary_rng(self.cfg.seed, id.0, iteration);
                let out = adversary::corrupt_gradient(&honest, &s, grant, &mut rng);
                if out.fell_back && s.kind == StrategyTag::OmniscientCraft {
                    self.stats.omniscient_fallbacks += 1;
                }
                out.gradient
            }
        };
        let committee = n.committee;
        self.nodes[id.index()].gossip.insert((id, iteration), g.clone());
        let peers: Vec<NodeId> = self.members(committee).iter().copied().filter(|m| *m != id).collect();
        for to in peers {
            self.send(sim, id, to, payload, "gossip", Msg::Gossip(g.clone()));
        }
        self.progress(sim, id);
    }

    fn progress(&mut self, sim: &mut Sim, id: NodeId) {
        let pending = std::mem::take(&mut self.nodes[id.index()].deferred);
        for b in pending {
            self.process_block(sim, id, b);
        }
        self.try_propose(sim, id);
        self.maybe_arm_timer(sim, id);
    }

    fn cert_for(&self, id: NodeId, iteration: u64, round: usize) -> Option<&CertifiedAggregation> {
        let n = &self.nodes[id.index()];
        if self.schedule.committee_count == 1 {
            n.certs_own.get(&(iteration, round))
        } else {
            n.certs_in.get(&(iteration, round))
        }
    }

    fn payload_ready(&self, id: NodeId, tip: &Digest) -> Option<(u64, usize)> {
        let n = &self.nodes[id.index()];
        let (t, r) = n.replica.next_step(tip);
        if n.paused || t >= self.cfg.iterations || n.model.iteration != t || !n.digests.contains_key(&t) {
            return None;
        }
        if n.replica.uncommitted_payloads(tip) >= MAX_RETAINED_SETS {
            return None;
        }
        if r > 0 && self.cert_for(id, t, r - 1).is_none() {
            return None;
        }
        let gossip_ok = n
            .replica
            .selection_members(r)
            .iter()
            .all(|m| n.gossip.contains_key(&(*m, t)));
        gossip_ok.then_some((t, r))
    }

    fn expects_proposal(&self, id: NodeId) -> bool {
        let n = &self.nodes[id.index()];
        let tip = n.replica.high_qc.block_hash;
        if !n.replica.is_genesis(&tip) && n.replica.block(&tip).is_none() {
            return true;
        }
        n.replica.uncommitted_payloads(&tip) > 0 || self.payload_ready(id, &tip).is_some()
    }

    fn maybe_arm_timer(&mut self, sim: &mut Sim, id: NodeId) {
        let n = &self.nodes[id.index()];
        if n.timer_armed_for == Some(n.wait_view) || !self.expects_proposal(id) {
            return;
        }
        let view = n.wait_view;
        let at = sim.now() + self.view_timeout * f64::from(1u32 << n.timeouts_in_row.min(3));
        self.nodes[id.index()].timer_armed_for = Some(view);
        self.timer(sim, at, id, "view-timer", Msg::ViewTimer { view });
    }

    fn on_view_timer(&mut self, sim: &mut Sim, id: NodeId, view: u64) {
        let n = &mut self.nodes[id.index()];
        if n.wait_view != view || n.timer_armed_for != Some(view) {
            return;
        }
        n.timer_armed_for = None;
        if !self.expects_proposal(id) {
            return;
        }
        let n = &mut self.nodes[id.index()];
        n.wait_view = view + 1;
        n.timeouts_in_row += 1;
        let high_qc = n.replica.high_qc.clone();
        let committed_view = n.replica.committed_view();
        let leader = n.replica.leader_of(view + 1);
        if n.byz.is_none() {
            self.stats.view_changes += 1;
        }
        if !self.withholds(id) {
            let size = self.cfg.network.control_bytes;
            self.send(sim, id, leader, size, "new-view", Msg::NewView { view: view + 1, high_qc, committed_view });
        }
        self.maybe_arm_timer(sim, id);
    }

    fn on_new_view(&mut self, sim: &mut Sim, id: NodeId, from: NodeId, view: u64, qc: QuorumCertificate, their_commit: u64) {
        let n = &self.nodes[id.index()];
        if n.replica.leader_of(view) != id || !n.replica.members.contains(&from) {
            return;
        }
        // help a lagging member catch up on certificates it has not seen
        if !self.withholds(id) {
            let mut push = Vec::new();
            if their_commit < n.replica.committed_view() {
                push.push(n.replica.commit_qc.clone());
            }
            if qc.view < n.replica.high_qc.view {
                push.push(n.replica.high_qc.clone());
            }
            let size = self.cfg.network.control_bytes;
            for q in push {
                self.send(sim, id, from, size, "sync-qc", Msg::SyncQc(q));
            }
        }
        let n = &self.nodes[id.index()];
        if qc.committee == n.committee && qc.verify(&n.replica.members) && qc.view > n.replica.high_qc.view {
            self.absorb_qc(sim, id, &qc, false);
        }
        let c = self.members(self.nodes[id.index()].committee).len();
        let n = &mut self.nodes[id.index()];
        let entry = n.new_views.entry(view).or_insert_with(|| (Default::default(), qc.clone()));
        entry.0.insert(from);
        if entry.0.len() >= quorum(c) && view > n.proposed_view && n.lead_view.is_none_or(|v| v < view) {
            n.lead_view = Some(view);
            n.wait_view = n.wait_view.max(view);
            self.try_propose(sim, id);
        }
    }

    /// Runs the lock/commit rules for a certificate learned outside a block.
    fn absorb_qc(&mut self, sim: &mut Sim, id: NodeId, qc: &QuorumCertificate, formed_here: bool) {
        let r = &mut self.nodes[id.index()].replica;
        r.record_qc(qc);
        let before = r.committed.len();
        let commits = r.process_qc_chain(qc);
        let missing = r.missing_ancestor(&qc.block_hash);
        self.handle_commits(sim, id, before, commits, qc.view, formed_here);
        if let Some(hash) = missing {
            if let Some(&s) = qc.signers.iter().find(|s| **s != id) {
                self.fetch(sim, id, hash, s);
            }
        }
    }

    fn on_vote(&mut self, sim: &mut Sim, id: NodeId, vote: Vote) {
        let n = &mut self.nodes[id.index()];
        if n.replica.leader_of(vote.view + 1) != id {
            return;
        }
        let members = n.replica.members.clone();
        let Some(qc) = n.votes.add(n.committee, &members, &vote) else {
            return;
        };
        self.on_qc(sim, id, qc);
    }

    fn on_qc(&mut self, sim: &mut Sim, id: NodeId, qc: QuorumCertificate) {
        self.absorb_qc(sim, id, &qc, true);
        let n = &mut self.nodes[id.index()];
        let next = qc.view + 1;
        // a fresh certificate lets its successor lead even if local timers ran ahead
        if next > n.proposed_view {
            n.lead_view = Some(next);
        }
        self.try_propose(sim, id);
        self.maybe_arm_timer(sim, id);
    }

    fn try_propose(&mut self, sim: &mut Sim, id: NodeId) {
        let n = &self.nodes[id.index()];
        let Some(view) = n.lead_view else { return };
        if view <= n.proposed_view || view <= n.replica.high_qc.view {
            return;
        }
        let tip = n.replica.high_qc.block_hash;
        if !n.replica.is_genesis(&tip) && n.replica.block(&tip).is_none() {
            let signer = n.replica.high_qc.signers.iter().copied().find(|s| *s != id);
            if let Some(s) = signer {
                self.fetch(sim, id, tip, s);
            }
            return;
        }
        if self.withholds(id) {
            return;
        }
        let payload = match self.payload_ready(id, &tip) {
            Some((t, r)) => Some(self.build_payload(id, t, r)),
            None if n.replica.uncommitted_payloads(&tip) > 0 || n.announce == Some(n.replica.high_qc.view) => None,
            None => return,
        };
        let n = &self.nodes[id.index()];
        let committee = n.committee;
        let justify = n.replica.high_qc.clone();
        let has_payload = payload.is_some();
        let block = Block::new(committee, view, tip, justify.clone(), payload, id);
        let n = &mut self.nodes[id.index()];
        n.proposed_view = view;
        n.lead_view = None;
        n.announce = None;
        n.wait_view = n.wait_view.max(view);
        if n.byz.is_none() {
            self.note_proposal(committee, &block, sim.now());
        }
        // send to the next leader first so it can certify without waiting
        let members = self.members(committee).to_vec();
        let start = members.iter().position(|m| *m == leader_of(&members, view + 1)).unwrap_or(0);
        let peers: Vec<NodeId> = (0..members.len())
            .map(|i| members[(start + i) % members.len()])
            .filter(|m| *m != id)
            .collect();
        let control = self.cfg.network.control_bytes;
        let size = if has_payload { self.cfg.payload_bytes + control } else { control };
        let equivocate = has_payload && self.strategy(id) == Some(StrategyTag::EquivocateLeader);
        let twin = equivocate.then(|| Block::new(committee, view, tip, justify, None, id));
        for (i, to) in peers.iter().enumerate() {
            match &twin {
                Some(t) if i % 2 == 1 => self.send(sim, id, *to, control, "proposal", Msg::Proposal(Box::new(t.clone()))),
                _ => self.send(sim, id, *to, size, "proposal", Msg::Proposal(Box::new(block.clone()))),
            }
        }
        self.on_proposal(sim, id, block);
        if let Some(t) = twin {
            self.on_proposal(sim, id, t);
        }
    }

    fn build_payload(&self, id: NodeId, t: u64, r: usize) -> StepPayload {
        let n = &self.nodes[id.index()];
        let selection: Vec<Gradient> = n
            .replica
            .selection_members(r)
            .iter()
            .map(|m| n.gossip[&(*m, t)].clone())
            .collect();
        let neighbor = if r == 0 { None } else { self.cert_for(id, t, r - 1).cloned() };
        let carried = neighbor.as_ref().map(|c| Token {
            value: c.value.clone(),
            count: c.count,
        });
        let phase = self.schedule.phase(r);
        let (result, result_count, weights) = match (phase, carried) {
            (Phase::Gather, Some(tok)) => (tok.value, tok.count, Vec::new()),
            (_, carried) => {
                let out = fold_step(&self.spec, &selection, carried.as_ref()).expect("validated inputs");
                (out.token.value, out.token.count, out.selection_weights)
            }
        };
        let mut p = StepPayload {
            iteration: t,
            round: r,
            token: self.schedule.token(n.committee, r),
            kind: if phase == Phase::Gather { StepKind::Gather } else { StepKind::Reduce },
            selection,
            neighbor,
            result,
            result_count,
            weights,
            model_digest: n.digests[&t],
        };
        if let Some(s) = n.byz.as_ref().filter(|s| s.kind == StrategyTag::FalsifyPartialAggregation) {
            let mut rng = adversary::adversary_rng(self.cfg.seed, id.0, t.wrapping_mul(97) + r as u64);
            adversary::falsify_payload(&mut p, s, &mut rng);
        }
        p
    }

    fn on_proposal(&mut self, sim: &mut Sim, id: NodeId, block: Block) {
        let committee = self.nodes[id.index()].committee;
        if block.hash_is_valid() && block.committee == committee {
            self.nodes[id.index()].replica.insert_block(block.clone());
            // the carried certificate may commit earlier steps and free pipeline room
            if block.justify.committee == committee && block.justify.verify(self.members(committee)) {
                let qc = block.justify.clone();
                self.absorb_qc(sim, id, &qc, false);
            }
        }
        let hash = block.hash;
        self.process_block(sim, id, block);
        // a certificate formed before its block arrived can now be applied
        let hq = self.nodes[id.index()].replica.high_qc.clone();
        if hq.block_hash == hash {
            self.absorb_qc(sim, id, &hq, true);
        }
        self.progress(sim, id);
    }

    fn decide(&self, id: NodeId, block: &Block) -> Decision {
        let n = &self.nodes[id.index()];
        match n.byz.as_ref().map(|s| s.kind) {
            None => {
                let gossip = |m: NodeId, t: u64| n.gossip.get(&(m, t)).map(gradient_digest);
                let digest = |t: u64| (n.model.iteration >= t).then(|| n.digests.get(&t).copied()).flatten();
                let ctx = ValidationContext {
                    spec: &self.spec,
                    committees: &self.assignment.committees,
                    model_digest: &digest,
                    gossip: &gossip,
                };
                match n.replica.validate(block, &ctx) {
                    Validation::Vote(_) => Decision::Vote,
                    Validation::Reject(r) => Decision::Reject(r),
                    Validation::Defer => Decision::Defer,
                }
            }
            Some(kind) => {
                let plausible = block.hash_is_valid()
                    && block.committee == n.committee
                    && block.proposer == n.replica.leader_of(block.view)
                    && block.view > block.justify.view;
                match (plausible, kind) {
                    (false, _) => Decision::Ignore,
                    (true, StrategyTag::Withhold) => Decision::Accept,
                    (true, _) => Decision::Vote,
                }
            }
        }
    }

    fn process_block(&mut self, sim: &mut Sim, id: NodeId, block: Block) {
        match self.decide(id, &block) {
            Decision::Ignore => {}
            Decision::Defer => {
                if self.is_honest(id) {
                    self.deferred_by_honest.insert(block.hash);
                }
                self.nodes[id.index()].deferred.push(block);
            }
            Decision::Reject(RejectReason::UnknownParent) => {
                let (parent, proposer) = (block.parent, block.proposer);
                self.nodes[id.index()].deferred.push(block);
                self.fetch(sim, id, parent, proposer);
            }
            Decision::Reject(reason) => self.note_rejection(&block, reason),
            d @ (Decision::Vote | Decision::Accept) => {
                let r = &mut self.nodes[id.index()].replica;
                let before = r.committed.len();
                let commits = r.accept(&block);
                if self.is_honest(id) {
                    self.note_storage(id);
                }
                let n = &mut self.nodes[id.index()];
                n.wait_view = n.wait_view.max(block.view + 1);
                n.timeouts_in_row = 0;
                self.handle_commits(sim, id, before, commits, block.justify.view, false);
                if matches!(d, Decision::Vote) {
                    let n = &self.nodes[id.index()];
                    let vote = Vote {
                        committee: n.committee,
                        voter: id,
                        view: block.view,
                        block_hash: block.hash,
                    };
                    let leader = n.replica.leader_of(block.view + 1);
                    let size = self.cfg.network.control_bytes;
                    self.send(sim, id, leader, size, "vote", Msg::Vote(vote));
                }
            }
        }
    }

    fn block_size(&self, b: &Block) -> u64 {
        let control = self.cfg.network.control_bytes;
        if b.payload.is_some() { self.cfg.payload_bytes + control } else { control }
    }

    /// Asks the block's proposer and one other random member for a missing ancestor.
    fn fetch(&mut self, sim: &mut Sim, id: NodeId, hash: Digest, proposer: NodeId) {
        let now = sim.now();
        let n = &mut self.nodes[id.index()];
        if n.fetching.get(&hash).is_some_and(|t| now - t < self.view_timeout) {
            return;
        }
        n.fetching.insert(hash, now);
        let members: Vec<NodeId> = self.members(self.nodes[id.index()].committee).iter().copied().filter(|m| *m != id).collect();
        let mut targets = vec![proposer];
        if !members.is_empty() {
            targets.push(members[self.jitter_rng.gen_range(0..members.len())]);
        }
        targets.dedup();
        let size = self.cfg.network.control_bytes;
        for to in targets.into_iter().filter(|t| *t != id) {
            self.send(sim, id, to, size, "fetch", Msg::FetchBlock(hash));
        }
    }

    fn on_block_reply(&mut self, sim: &mut Sim, id: NodeId, from: NodeId, block: Block) {
        let n = &mut self.nodes[id.index()];
        if n.fetching.remove(&block.hash).is_none() || !block.hash_is_valid() || block.committee != n.committee {
            return;
        }
        let parent = block.parent;
        let justify = block.justify.clone();
        n.replica.insert_block(block);
        let r = &n.replica;
        if !r.is_genesis(&parent) && r.block(&parent).is_none() {
            self.fetch(sim, id, parent, from);
        }
        let committee = self.nodes[id.index()].committee;
        if justify.verify(self.members(committee)) {
            self.absorb_qc(sim, id, &justify, false);
        }
        let n = &mut self.nodes[id.index()];
        let (ready, waiting): (Vec<_>, Vec<_>) = std::mem::take(&mut n.pending_qcs).into_iter().partition(|q| n.replica.block(&q.block_hash).is_some());
        n.pending_qcs = waiting;
        for q in ready {
            self.absorb_qc(sim, id, &q, false);
        }
        let hq = self.nodes[id.index()].replica.high_qc.clone();
        self.absorb_qc(sim, id, &hq, false);
        self.progress(sim, id);
    }

    fn on_sync_qc(&mut self, sim: &mut Sim, id: NodeId, from: NodeId, qc: QuorumCertificate) {
        let committee = self.nodes[id.index()].committee;
        if qc.committee != committee || !qc.verify(self.members(committee)) {
            return;
        }
        let r = &self.nodes[id.index()].replica;
        if !r.is_genesis(&qc.block_hash) && r.block(&qc.block_hash).is_none() {
            self.nodes[id.index()].pending_qcs.push(qc.clone());
            self.fetch(sim, id, qc.block_hash, from);
        }
        self.absorb_qc(sim, id, &qc, false);
        self.progress(sim, id);
    }

    fn handle_commits(&mut self, sim: &mut Sim, id: NodeId, start: usize, blocks: Vec<Block>, trigger_view: u64, formed_here: bool) {
        if blocks.is_empty() {
            return;
        }
        if self.is_honest(id) {
            self.note_commits(id, start, &blocks, trigger_view);
        }
        if formed_here && blocks.iter().any(|b| b.payload.is_some()) {
            self.nodes[id.index()].announce = Some(trigger_view);
        }
        let k = self.schedule.committee_count;
        let rounds = self.schedule.total_rounds();
        for b in blocks {
            let Some(p) = b.payload.clone() else { continue };
            let n = &mut self.nodes[id.index()];
            let committee = n.committee;
            if let Some(cert) = n.replica.qc_for(&b.hash).cloned().and_then(|qc| b.certified(qc)) {
                n.certs_own.insert((p.iteration, p.round), cert.clone());
                if formed_here && k > 1 && p.round + 1 < rounds && !self.withholds(id) {
                    let next = (committee + 1) % k;
                    let size = self.cfg.payload_bytes;
                    for to in self.members(next).to_vec() {
                        self.send(sim, id, to, size, "handoff", Msg::Handoff(Box::new(cert.clone())));
                    }
                }
            }
            if k > 1 && p.round + 1 < rounds && !self.nodes[id.index()].certs_in.contains_key(&(p.iteration, p.round)) {
                let at = sim.now() + self.handoff_timeout;
                self.timer(sim, at, id, "handoff-timer", Msg::HandoffTimer { iteration: p.iteration, round: p.round });
            }
            let n = &mut self.nodes[id.index()];
            if p.iteration != n.ring_iteration || p.round != n.ring.step_index {
                log::warn!("{id}: committed step ({}, {}) out of ring order", p.iteration, p.round);
                continue;
            }
            let complete = n.ring.commit(p.round, Token { value: p.result, count: p.result_count });
            if complete {
                self.finish_iteration(sim, id);
            }
        }
    }

    fn finish_iteration(&mut self, sim: &mut Sim, id: NodeId) {
        let lr = self.cfg.learning_rate;
        let n = &mut self.nodes[id.index()];
        let Some(Ok(agg)) = n.ring.final_aggregation() else {
            log::warn!("{id}: ring complete without a final aggregation");
            return;
        };
        let outcome = apply_update(&mut n.model, &agg, lr).expect("matching dimension");
        let t1 = n.model.iteration;
        n.digests.insert(t1, n.model.digest);
        n.digests.retain(|k, _| *k + 2 >= t1);
        n.gossip.retain(|(_, it), _| *it >= t1);
        n.certs_in.retain(|(it, _), _| *it >= t1);
        n.certs_own.retain(|(it, _), _| *it + 1 >= t1);
        n.ring = RingState::new(self.schedule, n.committee);
        n.ring_iteration = t1;
        let honest = n.byz.is_none();
        if honest && outcome == UpdateOutcome::Skipped {
            self.stats.skipped_updates += 1;
        }
        self.note_update(id, &agg, sim.now());
        if t1 >= self.cfg.iterations {
            self.nodes[id.index()].done = true;
            if honest {
                self.note_finished();
            }
            return;
        }
        let rc = &self.cfg.reconfiguration;
        if rc.enabled && t1.is_multiple_of(rc.interval) {
            self.nodes[id.index()].paused = true;
            if honest {
                self.arrive_at_barrier(sim, t1);
            }
            return;
        }
        self.start_iteration(sim, id, t1);
    }

    fn on_handoff(&mut self, sim: &mut Sim, id: NodeId, cert: CertifiedAggregation) {
        let k = self.schedule.committee_count;
        let committee = self.nodes[id.index()].committee;
        let src = (committee + k - 1) % k;
        if cert.source_committee != src || !cert.verify(self.members(src)) {
            return;
        }
        self.nodes[id.index()]
            .certs_in
            .entry((cert.iteration, cert.round))
            .or_insert(cert);
        self.progress(sim, id);
    }

    fn on_handoff_timer(&mut self, sim: &mut Sim, id: NodeId, iteration: u64, round: usize) {
        let n = &self.nodes[id.index()];
        if n.certs_in.contains_key(&(iteration, round)) || n.ring_iteration > iteration || n.paused {
            return;
        }
        let k = self.schedule.committee_count;
        let src = (n.committee + k - 1) % k;
        let members = self.members(src).to_vec();
        let pick = members[self.nodes[id.index()].rng.gen_range(0..members.len())];
        if self.is_honest(id) {
            self.stats.handoff_fallbacks += 1;
        }
        let size = self.cfg.network.control_bytes;
        self.send(sim, id, pick, size, "handoff-query", Msg::HandoffQuery { iteration, round });
        let at = sim.now() + self.handoff_timeout;
        self.timer(sim, at, id, "handoff-timer", Msg::HandoffTimer { iteration, round });
    }
}

//! Event-driven PIRATE runner: committees gossip local gradients, agree on
//! partial aggregations with chained BFT, pass them around the committee
//! ring and update their models.

pub mod node;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::ByzantineStrategy;
use crate::aggregation::{AggregatorSpec, Gradient};
use crate::allreduce::{fold_step, oracle_aggregate, RingSchedule, RingState, Token};
use crate::config::{ExperimentConfig, Framework};
use crate::consensus::*;
use crate::metrics::{hex, MetricsRow, RunReport, RunStats};
use crate::netsim::{LinkProfile, Network, NodeId, Simulation};
use crate::sharding::{self, assess, Admission, CommitteeAssignment, CreditLedger, NodeProfile};
use crate::training::{LearningTask, ModelState};

pub use node::Msg;

/// Per-node links: uplink drawn once per node from the configured range.
pub fn build_links(cfg: &ExperimentConfig) -> Vec<LinkProfile> {
    let net = &cfg.network;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x11_4e7);
    (0..cfg.n)
        .map(|_| {
            let up = if net.uplink_max_mbps > net.uplink_min_mbps {
                rng.gen_range(net.uplink_min_mbps..=net.uplink_max_mbps)
            } else {
                net.uplink_min_mbps
            };
            LinkProfile::new(up, net.downlink_mbps, net.latency_ms).expect("validated link")
        })
        .collect()
}

/// Byzantine ground truth: which node ids misbehave.
pub fn place_byzantine(cfg: &ExperimentConfig, committees: &[Vec<NodeId>]) -> BTreeSet<NodeId> {
    let Some(a) = &cfg.adversary else {
        return BTreeSet::new();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb7_2a11);
    if let Some(k) = a.per_committee {
        let mut out = BTreeSet::new();
        for m in committees {
            let mut m = m.clone();
            m.shuffle(&mut rng);
            out.extend(m.into_iter().take(k));
        }
        return out;
    }
    let count = a.count.unwrap_or_else(|| (a.fraction * cfg.n as f64).round() as usize);
    let mut ids: Vec<NodeId> = (0..cfg.n as u32).map(NodeId).collect();
    ids.shuffle(&mut rng);
    ids.into_iter().take(count).collect()
}

pub(crate) struct Node {
    pub active: bool,
    pub committee: usize,
    pub byz: Option<ByzantineStrategy>,
    pub model: ModelState,
    pub digests: BTreeMap<u64, Digest>,
    pub replica: ReplicaState,
    pub gossip: HashMap<(NodeId, u64), Gradient>,
    pub votes: VoteCollector,
    pub new_views: HashMap<u64, (BTreeSet<NodeId>, QuorumCertificate)>,
    pub deferred: Vec<Block>,
    /// Ancestors requested from peers and not yet received.
    /// Outstanding ancestor requests and when they were sent.
    pub fetching: HashMap<Digest, f64>,
    /// View of a locally formed QC that committed a payload and still has to
    /// reach the other members inside a block.
    pub announce: Option<u64>,
    /// Pushed certificates waiting for their block to be fetched.
    pub pending_qcs: Vec<QuorumCertificate>,
    pub certs_in: HashMap<(u64, usize), CertifiedAggregation>,
    pub certs_own: HashMap<(u64, usize), CertifiedAggregation>,
    pub ring: RingState,
    pub ring_iteration: u64,
    pub wait_view: u64,
    pub proposed_view: u64,
    pub lead_view: Option<u64>,
    pub timer_armed_for: Option<u64>,
    pub timeouts_in_row: u32,
    pub paused: bool,
    pub done: bool,
    pub rng: ChaCha8Rng,
}

struct ProposalRecord {
    epoch: u64,
    committee: usize,
    view: u64,
    hash: Digest,
    time: f64,
}

/// Full PIRATE simulation state outside the event queue.
pub struct World {
    pub(crate) cfg: ExperimentConfig,
    pub(crate) spec: AggregatorSpec,
    pub(crate) task: LearningTask,
    pub(crate) schedule: RingSchedule,
    pub(crate) gps: usize,
    pub(crate) assignment: CommitteeAssignment,
    pub(crate) nodes: Vec<Node>,
    pub(crate) byzantine: BTreeSet<NodeId>,
    pub(crate) epoch: u64,
    pub(crate) view_timeout: f64,
    pub(crate) handoff_timeout: f64,
    pub(crate) jitter_rng: ChaCha8Rng,
    pub(crate) target_params: Vec<f64>,
    wait_list: VecDeque<NodeId>,
    ledger: CreditLedger,
    epoch_credit: BTreeMap<NodeId, (f64, usize)>,
    reconfig_rng: ChaCha8Rng,
    probe: NodeId,
    rows: Vec<MetricsRow>,
    update_times: Vec<f64>,
    window_peak: u64,
    canonical: HashMap<(u64, usize), Vec<Digest>>,
    committed_total: u64,
    rejected: HashSet<Digest>,
    evictions: u64,
    pub(crate) stats: RunStats,
    finals: BTreeMap<u64, Vec<f64>>,
    iteration_digests: BTreeMap<u64, Digest>,
    selections: BTreeMap<u64, BTreeMap<(usize, usize), Vec<Gradient>>>,
    handoffs: BTreeMap<(u64, usize), usize>,
    proposals: Vec<ProposalRecord>,
    pub(crate) deferred_by_honest: HashSet<Digest>,
    commit_qc_view: HashMap<Digest, u64>,
    epoch_committees: Vec<Vec<Vec<NodeId>>>,
    barrier: usize,
    finished: usize,
}

impl World {
    pub fn new(cfg: &ExperimentConfig) -> Result<(World, Network), String> {
        if cfg.framework != Framework::Pirate {
            return Err("World runs the pirate framework".into());
        }
        let c = cfg.committee_size();
        let links = build_links(cfg);
        // admission: homogeneous compute, seeded uplinks, default credit
        let admitted: Vec<NodeId> = (0..cfg.n as u32)
            .map(NodeId)
            .filter(|id| {
                let mut p = NodeProfile::honest(*id, links[id.index()]);
                p.compute_score = 1.0;
                assess(&p, &cfg.admission).decision == Admission::Admit
            })
            .collect();
        let k = admitted.len() / c;
        if k == 0 {
            return Err(format!("only {} admitted nodes for committee size {c}", admitted.len()));
        }
        let active: Vec<NodeId> = admitted[..k * c].to_vec();
        let wait_list: VecDeque<NodeId> = admitted[k * c..].iter().copied().collect();
        let assignment = sharding::form_committees(&active, c, cfg.seed).map_err(|e| e.to_string())?;
        let gps = cfg.gradients_per_step.unwrap_or(((c * c) as f64 / (k * c) as f64).round().max(1.0) as usize).min(c);
        let schedule = RingSchedule::new(c, k, gps).map_err(|e| e.to_string())?;
        let task = LearningTask::generate(&cfg.task, cfg.n, cfg.seed).map_err(|e| e.to_string())?;
        let byzantine = place_byzantine(cfg, &assignment.committees);
        let strategy = cfg.adversary.as_ref().map(|a| a.strategy.clone());
        let slowest = active
            .iter()
            .map(|id| links[id.index()].uplink_mbps)
            .fold(f64::INFINITY, f64::min);
        let view_timeout = cfg
            .consensus
            .view_timeout_s
            .unwrap_or_else(|| default_view_timeout(c, cfg.payload_bytes, slowest, cfg.network.latency_ms / 1e3));
        let handoff_timeout = cfg.consensus.handoff_timeout_s.unwrap_or(view_timeout);
        let target_params = cfg
            .adversary
            .as_ref()
            .and_then(|a| a.target.clone())
            .unwrap_or_else(|| vec![5.0; cfg.task.dimension]);

        let init = ModelState::zeros(cfg.task.dimension);
        let mut nodes = Vec::with_capacity(cfg.n);
        for i in 0..cfg.n as u32 {
            let id = NodeId(i);
            let committee = assignment.committee_of(id);
            let members = committee.map(|j| assignment.committees[j].clone()).unwrap_or_else(|| vec![id]);
            let mut digests = BTreeMap::new();
            digests.insert(0, init.digest);
            nodes.push(Node {
                active: committee.is_some(),
                committee: committee.unwrap_or(usize::MAX),
                byz: if byzantine.contains(&id) { strategy.clone() } else { None },
                model: init.clone(),
                digests,
                replica: ReplicaState::new(id, committee.unwrap_or(0), members, schedule, gps, 0),
                gossip: HashMap::new(),
                votes: VoteCollector::new(),
                new_views: HashMap::new(),
                deferred: Vec::new(),
                fetching: HashMap::new(),
                announce: None,
                pending_qcs: Vec::new(),
                certs_in: HashMap::new(),
                certs_own: HashMap::new(),
                ring: RingState::new(schedule, committee.unwrap_or(0)),
                ring_iteration: 0,
                wait_view: 1,
                proposed_view: 0,
                lead_view: None,
                timer_armed_for: None,
                timeouts_in_row: 0,
                paused: false,
                done: false,
                rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ ((i as u64 + 1) << 24)),
            });
        }
        let ledger = CreditLedger::new(active.iter().copied());
        let mut w = World {
            cfg: cfg.clone(),
            spec: cfg.resolved_aggregator(),
            task,
            schedule,
            gps,
            assignment,
            nodes,
            byzantine,
            epoch: 0,
            view_timeout,
            handoff_timeout,
            jitter_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6157),
            target_params,
            wait_list,
            ledger,
            epoch_credit: BTreeMap::new(),
            reconfig_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0c0),
            probe: NodeId(0),
            rows: Vec::new(),
            update_times: Vec::new(),
            window_peak: 0,
            canonical: HashMap::new(),
            committed_total: 0,
            rejected: HashSet::new(),
            evictions: 0,
            stats: RunStats {
                finals_identical: true,
                honest_digests_agree: true,
                ..RunStats::default()
            },
            finals: BTreeMap::new(),
            iteration_digests: BTreeMap::new(),
            selections: BTreeMap::new(),
            handoffs: BTreeMap::new(),
            proposals: Vec::new(),
            deferred_by_honest: HashSet::new(),
            commit_qc_view: HashMap::new(),
            epoch_committees: Vec::new(),
            barrier: 0,
            finished: 0,
        };
        w.epoch_committees.push(w.assignment.committees.clone());
        w.pick_probe();
        for j in 0..w.assignment.committee_count() {
            let leader = leader_of(&w.assignment.committees[j], 1);
            w.nodes[leader.index()].lead_view = Some(1);
        }
        Ok((w, Network::new(links)))
    }

    pub(crate) fn is_honest(&self, id: NodeId) -> bool {
        !self.byzantine.contains(&id)
    }

    fn pick_probe(&mut self) {
        self.probe = self.assignment.committees[0]
            .iter()
            .copied()
            .find(|id| self.is_honest(*id))
            .unwrap_or(self.assignment.committees[0][0]);
    }

    fn honest_active(&self) -> usize {
        self.nodes.iter().filter(|n| n.active && n.byz.is_none()).count()
    }

    pub(crate) fn members(&self, committee: usize) -> &[NodeId] {
        &self.assignment.committees[committee]
    }

    /// Runs the scenario to completion or liveness failure.
    pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, String> {
        let (mut world, network) = World::new(cfg)?;
        let mut sim: Simulation<node::Envelope> = Simulation::new(network);
        let horizon = cfg
            .max_simulated_time_s
            .unwrap_or((cfg.iterations as f64 + 1.0) * 200.0 * world.view_timeout + 1e4);
        if cfg.iterations > 0 {
            for i in 0..cfg.n {
                if world.nodes[i].active {
                    world.start_iteration(&mut sim, NodeId(i as u32), 0);
                }
            }
            let outcome = sim.run_until_idle(Some(horizon), |sim, ev| world.handle(sim, ev));
            if outcome.truncated {
                log::warn!("simulation truncated at horizon {horizon}");
            }
        }
        Ok(world.finish(&sim))
    }

    fn finish(mut self, sim: &Simulation<node::Envelope>) -> RunReport {
        let completed = self.rows.len() as u64;
        let liveness_failure = (completed < self.cfg.iterations).then(|| {
            format!(
                "completed {completed} of {} iterations by simulated time {:.3}s",
                self.cfg.iterations,
                sim.now()
            )
        });
        self.check_oracle();
        self.evaluate_liveness_windows();
        let probe = &self.nodes[self.probe.index()];
        let final_params = probe.model.params.clone();
        let final_loss = self.task.loss(&final_params);
        let mut times = Vec::with_capacity(self.update_times.len());
        let mut prev = 0.0;
        for &t in &self.update_times {
            times.push(t - prev);
            prev = t;
        }
        let honest_final: Vec<Digest> = self
            .nodes
            .iter()
            .filter(|n| n.active && n.byz.is_none() && n.model.iteration == completed)
            .map(|n| n.model.digest)
            .collect();
        if honest_final.windows(2).any(|w| w[0] != w[1]) {
            self.stats.honest_digests_agree = false;
        }
        let (lo, hi) = self
            .handoffs
            .iter()
            .filter(|((it, _), _)| *it < completed)
            .fold((None, None), |(lo, hi): (Option<usize>, Option<usize>), (_, &v)| {
                (Some(lo.map_or(v, |l| l.min(v))), Some(hi.map_or(v, |h| h.max(v))))
            });
        self.stats.handoffs_min = lo;
        self.stats.handoffs_max = hi;
        RunReport {
            framework: Framework::Pirate,
            n: self.cfg.n,
            c: self.cfg.committee_size(),
            payload_bytes: self.cfg.payload_bytes,
            rows: self.rows,
            iteration_times: times,
            final_params,
            final_loss,
            liveness_failure,
            stats: self.stats,
            trace_digest: hex(&sim.trace_digest()),
        }
    }

    // ---- harness bookkeeping ------------------------------------------

    pub(crate) fn note_proposal(&mut self, committee: usize, block: &Block, time: f64) {
        if block.payload.is_some() {
            self.proposals.push(ProposalRecord {
                epoch: self.epoch,
                committee,
                view: block.view,
                hash: block.hash,
                time,
            });
        }
    }

    pub(crate) fn note_rejection(&mut self, block: &Block, reason: RejectReason) {
        let key = serde_json::to_value(reason)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        *self.stats.rejections.entry(key).or_default() += 1;
        if matches!(
            reason,
            RejectReason::AggregationMismatch | RejectReason::ModelDigestMismatch | RejectReason::InvalidNeighbor
        ) {
            self.stats.misbehavior_reports += 1;
        }
        self.rejected.insert(block.hash);
    }

    pub(crate) fn note_storage(&mut self, node: NodeId) {
        let r = &self.nodes[node.index()].replica;
        let payloads = r.retained_payloads();
        self.stats.peak_retained_payloads = self.stats.peak_retained_payloads.max(payloads);
        self.stats.peak_retained_sets = self.stats.peak_retained_sets.max(r.sets.len());
        if payloads > MAX_RETAINED_SETS * MAX_SET_PAYLOADS {
            self.stats.storage_violations += 1;
        }
        assert!(
            payloads <= MAX_RETAINED_SETS * MAX_SET_PAYLOADS,
            "replica {node} retains {payloads} gradient payloads"
        );
        self.window_peak = self.window_peak.max(r.retained_bytes());
    }

    /// Checks an honest replica's newly committed blocks against the first
    /// committed sequence of its committee and records first commits.
    pub(crate) fn note_commits(&mut self, node: NodeId, start: usize, blocks: &[Block], trigger_view: u64) {
        let committee = self.nodes[node.index()].committee;
        let key = (self.epoch, committee);
        for (offset, b) in blocks.iter().enumerate() {
            let pos = start + offset;
            let seq = self.canonical.entry(key).or_default();
            if pos < seq.len() {
                if seq[pos] != b.hash {
                    self.stats.conflicting_commits += 1;
                }
                continue;
            }
            seq.push(b.hash);
            self.committed_total += 1;
            self.commit_qc_view.insert(b.hash, trigger_view);
            if let Some(p) = &b.payload {
                self.record_first_commit(committee, p);
            }
        }
    }

    fn record_first_commit(&mut self, committee: usize, p: &StepPayload) {
        let carried = p.neighbor.as_ref().map(|n| Token {
            value: n.value.clone(),
            count: n.count,
        });
        let honest = match p.kind {
            StepKind::Gather => carried.as_ref().map(|t| (t.value.values.clone(), t.count, false, Vec::new())),
            StepKind::Reduce => fold_step(&self.spec, &p.selection, carried.as_ref())
                .ok()
                .map(|o| (o.token.value.values, o.token.count, o.fallback, o.selection_weights)),
        };
        let falsified = match &honest {
            Some((v, count, _, _)) => {
                *count != p.result_count || v.iter().zip(&p.result.values).any(|(a, b)| (a - b).abs() > 1e-9)
            }
            None => true,
        };
        if falsified {
            self.stats.falsified_commits += 1;
        }
        if p.neighbor.as_ref().is_some_and(|n| n.source_committee != committee) {
            *self.handoffs.entry((p.iteration, committee)).or_default() += 1;
        } else {
            self.handoffs.entry((p.iteration, committee)).or_default();
        }
        if p.kind == StepKind::Reduce {
            self.selections
                .entry(p.iteration)
                .or_default()
                .insert((committee, p.round), p.selection.clone());
            let fallback = honest.as_ref().is_some_and(|h| h.2);
            if fallback {
                self.stats.fallback_steps += 1;
            }
            for (g, &w) in p.selection.iter().zip(&p.weights) {
                if self.byzantine.contains(&g.origin) {
                    self.stats.byzantine_entries += 1;
                    if w == 0.0 {
                        self.stats.byzantine_zero_weight += 1;
                    }
                }
                if !fallback {
                    let e = self.epoch_credit.entry(g.origin).or_insert((0.0, 0));
                    e.0 += w;
                    e.1 += 1;
                }
            }
        }
    }

    /// Records a node's model update; returns true when the node should pause
    /// at a reconfiguration barrier.
    pub(crate) fn note_update(&mut self, node: NodeId, final_agg: &Gradient, time: f64) {
        let n = &self.nodes[node.index()];
        if n.byz.is_some() {
            return;
        }
        let it = n.model.iteration;
        match self.finals.get(&(it - 1)) {
            Some(prev) if prev.iter().map(|v| v.to_bits()).ne(final_agg.values.iter().map(|v| v.to_bits())) => {
                self.stats.finals_identical = false;
            }
            Some(_) => {}
            None => {
                self.finals.insert(it - 1, final_agg.values.clone());
            }
        }
        match self.iteration_digests.get(&it) {
            Some(d) if *d != n.model.digest => self.stats.honest_digests_agree = false,
            Some(_) => {}
            None => {
                self.iteration_digests.insert(it, n.model.digest);
            }
        }
        if node == self.probe {
            let current_peak = self
                .nodes
                .iter()
                .filter(|n| n.active)
                .map(|n| n.replica.retained_bytes())
                .max()
                .unwrap_or(0);
            self.rows.push(MetricsRow {
                iteration: it,
                simulated_time_s: time,
                per_node_storage_bytes: self.window_peak,
                global_loss: self.task.loss(&n.model.params),
                committed_blocks: self.committed_total,
                rejected_blocks: self.rejected.len() as u64,
                evictions: self.evictions,
            });
            self.window_peak = current_peak;
            self.update_times.push(time);
        }
    }

    /// An honest node finished the run.
    pub(crate) fn note_finished(&mut self) {
        self.finished += 1;
    }

    pub(crate) fn all_finished(&self) -> bool {
        self.finished >= self.honest_active()
    }

    fn check_oracle(&mut self) {
        let k = self.schedule.committee_count;
        let l = self.schedule.reduce_rounds;
        let mut worst: f64 = 0.0;
        for (it, fin) in &self.finals {
            let Some(sel) = self.selections.get(it) else { continue };
            let grid: Option<Vec<Vec<Vec<Gradient>>>> = (0..k)
                .map(|j| (0..l).map(|r| sel.get(&(j, r)).cloned()).collect::<Option<Vec<_>>>())
                .collect();
            let Some(grid) = grid else { continue };
            if let Ok(o) = oracle_aggregate(&self.spec, &self.schedule, &grid) {
                for (a, b) in o.values.iter().zip(fin) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        self.stats.oracle_max_error = worst;
    }

    fn evaluate_liveness_windows(&mut self) {
        // windows open once late pre-GST messages have landed and the longest
        // backed-off view timer armed before GST has expired
        let c = &self.cfg.consensus;
        let gst = if c.gst_s > 0.0 { c.gst_s + c.pre_gst_jitter_s + 8.0 * self.view_timeout } else { 0.0 };
        let mut windows = 0;
        let mut ok = 0;
        let mut excluded = 0;
        for p in &self.proposals {
            if p.time < gst {
                continue;
            }
            let members = &self.epoch_committees[p.epoch as usize][p.committee];
            let honest_run = (0..4).all(|d| self.is_honest(leader_of(members, p.view + d)));
            if !honest_run {
                continue;
            }
            // an honest member still lacked the step's inputs, so the window
            // measures data availability rather than consensus
            if self.deferred_by_honest.contains(&p.hash) {
                excluded += 1;
                continue;
            }
            let committed = self.commit_qc_view.get(&p.hash);
            let later_views = self
                .proposals
                .iter()
                .any(|q| q.epoch == p.epoch && q.committee == p.committee && q.view > p.view);
            if committed.is_none() && !later_views {
                // run ended before the window closed
                continue;
            }
            windows += 1;
            if committed.is_some_and(|&v| v <= p.view + 2) {
                ok += 1;
            }
        }
        self.stats.liveness_windows = windows;
        self.stats.liveness_ok = ok;
        self.stats.liveness_excluded = excluded;
    }

    // ---- reconfiguration ----------------------------------------------

    pub(crate) fn arrive_at_barrier(&mut self, sim: &mut Simulation<node::Envelope>, iteration: u64) {
        self.barrier += 1;
        if self.barrier < self.honest_active() {
            return;
        }
        self.barrier = 0;
        self.reconfigure(sim, iteration);
    }

    fn reconfigure(&mut self, sim: &mut Simulation<node::Envelope>, iteration: u64) {
        let credits: Vec<(NodeId, f64)> = self
            .epoch_credit
            .iter()
            .map(|(id, (sum, n))| (*id, sum / *n as f64))
            .collect();
        self.ledger.update_credit(&credits, self.epoch);
        self.epoch_credit.clear();
        let evict = self.ledger.evict_low_credit(&self.cfg.admission);
        for node in evict {
            let Some(joiner) = self.wait_list.pop_front() else {
                log::warn!("{node} has low credit but no replacement is waiting");
                continue;
            };
            sharding::leave(&mut self.assignment, node);
            self.ledger.remove(node);
            self.nodes[node.index()].active = false;
            self.evictions += 1;
            let res = sharding::cuckoo_reassign_in_place(&mut self.assignment, joiner, self.cfg.reconfiguration.k_evict, &mut self.reconfig_rng);
            if let Err(e) = res {
                log::warn!("cuckoo reassignment failed: {e}");
                continue;
            }
            self.ledger.register(joiner);
            self.nodes[joiner.index()].active = true;
        }
        self.epoch += 1;
        self.epoch_committees.push(self.assignment.committees.clone());
        self.pick_probe();
        let honest_model = self.nodes[self.probe.index()].model.clone();
        for j in 0..self.assignment.committee_count() {
            let members = self.assignment.committees[j].clone();
            for &id in &members {
                let n = &mut self.nodes[id.index()];
                n.committee = j;
                n.model = honest_model.clone();
                n.digests.insert(iteration, honest_model.digest);
                n.replica = ReplicaState::new(id, j, members.clone(), self.schedule, self.gps, iteration);
                n.gossip.clear();
                n.votes = VoteCollector::new();
                n.new_views.clear();
                n.deferred.clear();
                n.fetching.clear();
                n.announce = None;
                n.pending_qcs.clear();
                n.certs_in.clear();
                n.certs_own.clear();
                n.ring = RingState::new(self.schedule, j);
                n.ring_iteration = iteration;
                n.wait_view = 1;
                n.proposed_view = 0;
                n.lead_view = None;
                n.timer_armed_for = None;
                n.timeouts_in_row = 0;
                n.paused = false;
            }
            let leader = leader_of(&members, 1);
            self.nodes[leader.index()].lead_view = Some(1);
        }
        let active: Vec<NodeId> = self.assignment.members().collect();
        for id in active {
            self.start_iteration(sim, id, iteration);
        }
    }
}

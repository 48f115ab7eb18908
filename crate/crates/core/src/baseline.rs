//! LearningChain comparator: lottery-elected leader, all-to-all gradient
//! broadcast, full history kept by every node.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{self, OmniscientView};
use crate::aggregation::{self, AggregatorSpec, Gradient};
use crate::config::{ExperimentConfig, Framework};
use crate::metrics::{hex, MetricsRow, RunReport, RunStats};
use crate::netsim::{EventKind, Network, NodeId, SimEvent, Simulation};
use crate::sharding::StrategyTag;
use crate::training::{apply_update, LearningTask, ModelState, UpdateOutcome};
use crate::world::{build_links, place_byzantine};

/// Leader of `iteration`, drawn uniformly; stands in for proof-of-work.
pub fn lottery_leader(seed: u64, iteration: u64, n: usize) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1c_0000_0000 ^ iteration.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    NodeId(rng.gen_range(0..n as u32))
}

/// Bytes one node adds to its history per iteration: every local gradient
/// plus the leader's aggregation.
pub fn storage_growth_per_iteration(n: usize, payload: u64) -> u64 {
    (n as u64 + 1) * payload
}

#[derive(Clone, Debug)]
enum LcMsg {
    Start(u64),
    Gradient(Gradient),
    Mined(u64),
    Block { iteration: u64, aggregate: Gradient },
}

/// Per-node state. History is only accounted, not materialized.
#[derive(Clone, Debug)]
pub struct LcNode {
    pub model: ModelState,
    pub history_items: u64,
    pub storage_bytes: u64,
    inbox: BTreeMap<u64, BTreeMap<NodeId, Gradient>>,
    mined: BTreeSet<u64>,
}

struct Chain {
    cfg: ExperimentConfig,
    task: LearningTask,
    spec: AggregatorSpec,
    nodes: Vec<LcNode>,
    byzantine: BTreeSet<NodeId>,
    target: Vec<f64>,
    probe: NodeId,
    rows: Vec<MetricsRow>,
    update_times: Vec<f64>,
    committed: u64,
    stats: RunStats,
}

impl Chain {
    fn payload(&self) -> u64 {
        self.cfg.payload_bytes
    }

    fn peers(&self, id: NodeId) -> Vec<NodeId> {
        let n = self.cfg.n as u32;
        // rotate so receivers of concurrent broadcasts are spread out
        (1..n).map(|k| NodeId((id.0 + k) % n)).collect()
    }

    fn local_gradient(&mut self, id: NodeId) -> Gradient {
        let model = &self.nodes[id.index()].model;
        let honest = self
            .task
            .local_gradient(model, id.index(), id, self.payload())
            .expect("non-empty shard");
        let Some(strategy) = self.cfg.adversary.as_ref().map(|a| a.strategy.clone()) else {
            return honest;
        };
        if !self.byzantine.contains(&id) || !strategy.corrupts_gradient() {
            return honest;
        }
        let others: Vec<Gradient> = (0..self.cfg.n as u32)
            .map(NodeId)
            .filter(|m| !self.byzantine.contains(m))
            .map(|m| self.task.local_gradient(model, m.index(), m, self.payload()).expect("shard"))
            .collect();
        let colluders = if strategy.kind == StrategyTag::OmniscientCraft {
            self.byzantine.len()
        } else {
            0
        };
        let lr = self.cfg.learning_rate;
        let target: Vec<f64> = model.params.iter().zip(&self.target).map(|(p, t)| (p - t) / lr).collect();
        let view = OmniscientView {
            others: &others,
            colluders,
            target_mean: &target,
        };
        let mut rng = adversary::adversary_rng(self.cfg.seed, id.0, model.iteration);
        let out = adversary::corrupt_gradient(&honest, &strategy, (lr > 0.0).then_some(&view), &mut rng);
        if out.fell_back && strategy.kind == StrategyTag::OmniscientCraft {
            self.stats.omniscient_fallbacks += 1;
        }
        out.gradient
    }

    fn handle(&mut self, sim: &mut Simulation<LcMsg>, ev: SimEvent<LcMsg>) {
        let id = ev.target;
        match ev.kind {
            EventKind::Timer(LcMsg::Start(it)) => {
                let g = self.local_gradient(id);
                let peers = self.peers(id);
                if !peers.is_empty() {
                    sim.broadcast(id, &peers, self.payload(), "lc-gradient", LcMsg::Gradient(g.clone()))
                        .expect("gradient broadcast");
                }
                self.receive_gradient(sim, id, it, g);
            }
            EventKind::Delivery {
                msg: LcMsg::Gradient(g), ..
            } => {
                let it = g.iteration;
                self.receive_gradient(sim, id, it, g);
            }
            EventKind::Timer(LcMsg::Mined(it)) => {
                self.nodes[id.index()].mined.insert(it);
                self.try_publish(sim, id, it);
            }
            EventKind::Delivery {
                msg: LcMsg::Block { iteration, aggregate },
                ..
            } => self.apply_block(sim, id, iteration, &aggregate),
            _ => {}
        }
    }

    fn receive_gradient(&mut self, sim: &mut Simulation<LcMsg>, id: NodeId, it: u64, g: Gradient) {
        let n = self.cfg.n;
        let node = &mut self.nodes[id.index()];
        let bucket = node.inbox.entry(it).or_default();
        bucket.insert(g.origin, g);
        let full = bucket.len() == n;
        if full && lottery_leader(self.cfg.seed, it, n) == id {
            let at = sim.now() + self.cfg.mining_delay_s;
            sim.schedule_timer(at, id, "lc-mined", LcMsg::Mined(it)).expect("mining timer");
        }
    }

    fn try_publish(&mut self, sim: &mut Simulation<LcMsg>, id: NodeId, it: u64) {
        let node = &self.nodes[id.index()];
        let Some(bucket) = node.inbox.get(&it) else { return };
        if bucket.len() < self.cfg.n || !node.mined.contains(&it) {
            return;
        }
        let grads: Vec<Gradient> = bucket.values().cloned().collect();
        let mut aggregate = aggregation::aggregate(&self.spec, &grads).expect("aggregation inputs").gradient;
        aggregate.payload_bytes = self.payload();
        aggregate.origin = NodeId::AGGREGATE;
        aggregate.iteration = it;
        let peers = self.peers(id);
        let block_bytes = storage_growth_per_iteration(self.cfg.n, self.payload());
        if !peers.is_empty() {
            sim.broadcast(
                id,
                &peers,
                block_bytes,
                "lc-block",
                LcMsg::Block {
                    iteration: it,
                    aggregate: aggregate.clone(),
                },
            )
            .expect("block broadcast");
        }
        self.committed += 1;
        self.apply_block(sim, id, it, &aggregate);
    }

    fn apply_block(&mut self, sim: &mut Simulation<LcMsg>, id: NodeId, it: u64, aggregate: &Gradient) {
        let n = self.cfg.n;
        let growth = storage_growth_per_iteration(n, self.payload());
        let lr = self.cfg.learning_rate;
        let node = &mut self.nodes[id.index()];
        if node.model.iteration != it {
            return;
        }
        node.inbox.remove(&it);
        node.mined.remove(&it);
        node.history_items += n as u64 + 1;
        node.storage_bytes += growth;
        if apply_update(&mut node.model, aggregate, lr).expect("dimension") == UpdateOutcome::Skipped {
            self.stats.skipped_updates += 1;
        }
        let now = sim.now();
        if id == self.probe {
            let peak = self.nodes.iter().map(|n| n.storage_bytes).max().unwrap_or(0);
            let model = &self.nodes[id.index()].model;
            self.rows.push(MetricsRow {
                iteration: model.iteration,
                simulated_time_s: now,
                per_node_storage_bytes: peak,
                global_loss: self.task.loss(&model.params),
                committed_blocks: self.committed,
                rejected_blocks: 0,
                evictions: 0,
            });
            self.update_times.push(now);
        }
        if it + 1 < self.cfg.iterations {
            let at = now + self.cfg.compute_time_s;
            sim.schedule_timer(at, id, "lc-start", LcMsg::Start(it + 1)).expect("start timer");
        }
    }
}

/// Runs a LearningChain scenario end to end.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, String> {
    if cfg.framework != Framework::Learningchain {
        return Err("baseline::run needs framework learningchain".into());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let task = LearningTask::generate(&cfg.task, cfg.n, cfg.seed).map_err(|e| e.to_string())?;
    let all: Vec<NodeId> = (0..cfg.n as u32).map(NodeId).collect();
    let byzantine = place_byzantine(cfg, std::slice::from_ref(&all));
    let probe = all.iter().copied().find(|m| !byzantine.contains(m)).unwrap_or(NodeId(0));
    let target = cfg
        .adversary
        .as_ref()
        .and_then(|a| a.target.clone())
        .unwrap_or_else(|| vec![5.0; cfg.task.dimension]);
    let init = ModelState::zeros(cfg.task.dimension);
    let nodes = (0..cfg.n)
        .map(|_| LcNode {
            model: init.clone(),
            history_items: 0,
            storage_bytes: 0,
            inbox: BTreeMap::new(),
            mined: BTreeSet::new(),
        })
        .collect();
    let mut chain = Chain {
        spec: cfg.resolved_aggregator(),
        cfg: cfg.clone(),
        task,
        nodes,
        byzantine,
        target,
        probe,
        rows: Vec::new(),
        update_times: Vec::new(),
        committed: 0,
        stats: RunStats {
            finals_identical: true,
            honest_digests_agree: true,
            ..RunStats::default()
        },
    };
    let mut sim: Simulation<LcMsg> = Simulation::new(Network::new(build_links(cfg)));
    if cfg.iterations > 0 {
        for &id in &all {
            sim.schedule_timer(cfg.compute_time_s, id, "lc-start", LcMsg::Start(0))
                .map_err(|e| e.to_string())?;
        }
        let horizon = cfg.max_simulated_time_s;
        let outcome = sim.run_until_idle(horizon, |sim, ev| chain.handle(sim, ev));
        if outcome.truncated {
            log::warn!("learningchain run truncated at {:?}", horizon);
        }
    }
    let completed = chain.rows.len() as u64;
    let liveness_failure = (completed < cfg.iterations)
        .then(|| format!("completed {completed} of {} iterations by simulated time {:.3}s", cfg.iterations, sim.now()));
    let digests: Vec<_> = chain
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, n)| !chain.byzantine.contains(&NodeId(*i as u32)) && n.model.iteration == completed)
        .map(|(_, n)| n.model.digest)
        .collect();
    chain.stats.honest_digests_agree = digests.windows(2).all(|w| w[0] == w[1]);
    let mut times = Vec::with_capacity(chain.update_times.len());
    let mut prev = 0.0;
    for &t in &chain.update_times {
        times.push(t - prev);
        prev = t;
    }
    let probe_model = &chain.nodes[probe.index()].model;
    Ok(RunReport {
        framework: Framework::Learningchain,
        n: cfg.n,
        c: cfg.n,
        payload_bytes: cfg.payload_bytes,
        final_params: probe_model.params.clone(),
        final_loss: chain.task.loss(&probe_model.params),
        rows: chain.rows,
        iteration_times: times,
        liveness_failure,
        stats: chain.stats,
        trace_digest: hex(&sim.trace_digest()),
    })
}

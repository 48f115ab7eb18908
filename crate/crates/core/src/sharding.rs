//! Permission control, committee formation, credit accounting and Cuckoo-rule
//! reconfiguration.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{LinkProfile, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum ShardingError {
    #[error("{n} nodes cannot be split into committees of {c}")]
    NotDivisible { n: usize, c: usize },
    #[error("committee size must be positive")]
    ZeroCommitteeSize,
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyTag {
    HarmfulGradient,
    OmniscientCraft,
    FalsifyPartialAggregation,
    Withhold,
    EquivocateLeader,
    ContaminateModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeProfile {
    pub id: NodeId,
    pub compute_score: f64,
    pub link: LinkProfile,
    pub join_epoch: u64,
    pub credit_history: Vec<(u64, f64)>,
    /// Ground truth for the harness; protocol logic never reads it.
    pub is_byzantine: bool,
    pub strategy: Option<StrategyTag>,
}

impl NodeProfile {
    pub fn honest(id: NodeId, link: LinkProfile) -> Self {
        NodeProfile {
            id,
            compute_score: 1.0,
            link,
            join_epoch: 0,
            credit_history: Vec::new(),
            is_byzantine: false,
            strategy: None,
        }
    }
}

/// Weights and thresholds of the permission controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmissionPolicy {
    pub compute_weight: f64,
    pub uplink_weight: f64,
    pub credit_weight: f64,
    pub admit_threshold: f64,
    /// Uplink range used to normalise the network score into [0, 1].
    pub uplink_floor_mbps: f64,
    pub uplink_ceiling_mbps: f64,
    /// Credit assumed for nodes without history.
    pub default_credit: f64,
    /// Window (in epochs) for recent credit and eviction.
    pub credit_window: usize,
    pub credit_floor: f64,
}

impl Default for AdmissionPolicy {
    fn default() -> Self {
        AdmissionPolicy {
            compute_weight: 0.4,
            uplink_weight: 0.3,
            credit_weight: 0.3,
            admit_threshold: 0.5,
            uplink_floor_mbps: 80.0,
            uplink_ceiling_mbps: 240.0,
            default_credit: 1.0,
            credit_window: 3,
            credit_floor: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Admit,
    Deny,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assessment {
    pub decision: Admission,
    pub reliability: f64,
}

fn recent_mean(history: &[(u64, f64)], window: usize) -> Option<f64> {
    if history.is_empty() || window == 0 {
        return None;
    }
    let tail = &history[history.len().saturating_sub(window)..];
    Some(tail.iter().map(|(_, c)| c).sum::<f64>() / tail.len() as f64)
}

pub fn assess(profile: &NodeProfile, policy: &AdmissionPolicy) -> Assessment {
    let span = policy.uplink_ceiling_mbps - policy.uplink_floor_mbps;
    let uplink = if span > 0.0 {
        ((profile.link.uplink_mbps - policy.uplink_floor_mbps) / span).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let credit = recent_mean(&profile.credit_history, policy.credit_window).unwrap_or(policy.default_credit);
    let reliability = policy.compute_weight * profile.compute_score.clamp(0.0, 1.0)
        + policy.uplink_weight * uplink
        + policy.credit_weight * credit;
    let decision = if reliability >= policy.admit_threshold - 1e-12 {
        Admission::Admit
    } else {
        Admission::Deny
    };
    Assessment { decision, reliability }
}

/// Disjoint committees of equal size; list order is the ring order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeAssignment {
    pub committees: Vec<Vec<NodeId>>,
    pub c: usize,
}

impl CommitteeAssignment {
    pub fn committee_count(&self) -> usize {
        self.committees.len()
    }

    pub fn node_count(&self) -> usize {
        self.committees.iter().map(Vec::len).sum()
    }

    pub fn committee_of(&self, node: NodeId) -> Option<usize> {
        self.committees.iter().position(|m| m.contains(&node))
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.committees.iter().flatten().copied()
    }

    /// Disjointness and exact size `c` for every committee.
    pub fn validate(&self) -> Result<(), ShardingError> {
        if self.c == 0 {
            return Err(ShardingError::ZeroCommitteeSize);
        }
        let mut seen = HashSet::new();
        for (i, m) in self.committees.iter().enumerate() {
            if m.len() != self.c {
                return Err(ShardingError::InvalidAssignment(format!(
                    "committee {i} has {} members, expected {}",
                    m.len(),
                    self.c
                )));
            }
            for id in m {
                if !seen.insert(*id) {
                    return Err(ShardingError::InvalidAssignment(format!("{id} appears twice")));
                }
            }
        }
        Ok(())
    }
}

/// Seeded shuffle; consecutive blocks of `c` become committees.
pub fn form_committees(nodes: &[NodeId], c: usize, seed: u64) -> Result<CommitteeAssignment, ShardingError> {
    if c == 0 {
        return Err(ShardingError::ZeroCommitteeSize);
    }
    if nodes.is_empty() || !nodes.len().is_multiple_of(c) {
        return Err(ShardingError::NotDivisible { n: nodes.len(), c });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = nodes.to_vec();
    ids.shuffle(&mut rng);
    Ok(CommitteeAssignment {
        committees: ids.chunks(c).map(<[NodeId]>::to_vec).collect(),
        c,
    })
}

/// Removes a departing node, leaving a vacancy in its committee.
pub fn leave(assignment: &mut CommitteeAssignment, node: NodeId) -> bool {
    for m in &mut assignment.committees {
        if let Some(pos) = m.iter().position(|&x| x == node) {
            m.remove(pos);
            return true;
        }
    }
    false
}

/// Cuckoo rule: the joiner lands in a uniformly random committee, `k_evict`
/// random members of that committee are moved to random other committees,
/// then over-full committees shed random members to under-full ones until
/// every committee has exactly `c` members again.
///
/// The assignment must have exactly one vacancy overall (after a departure).
pub fn cuckoo_reassign(
    assignment: &CommitteeAssignment,
    joining: NodeId,
    k_evict: usize,
    rng: &mut impl Rng,
) -> Result<CommitteeAssignment, ShardingError> {
    let mut out = assignment.clone();
    cuckoo_reassign_in_place(&mut out, joining, k_evict, rng)?;
    Ok(out)
}

pub fn cuckoo_reassign_in_place(
    a: &mut CommitteeAssignment,
    joining: NodeId,
    k_evict: usize,
    rng: &mut impl Rng,
) -> Result<(), ShardingError> {
    let k = a.committee_count();
    if k == 0 {
        return Err(ShardingError::InvalidAssignment("no committees".into()));
    }
    if a.node_count() + 1 != k * a.c {
        return Err(ShardingError::InvalidAssignment(format!(
            "expected one vacancy, have {} nodes for {} seats",
            a.node_count(),
            k * a.c
        )));
    }
    let home = rng.gen_range(0..k);
    a.committees[home].push(joining);
    if k > 1 {
        for _ in 0..k_evict {
            // the joiner sits at the end and is never evicted
            let len = a.committees[home].len();
            if len < 2 {
                break;
            }
            let pos = rng.gen_range(0..len - 1);
            let evicted = a.committees[home].swap_remove(pos);
            // swap_remove moved the joiner into `pos`; put it back at the end
            let last = a.committees[home].len() - 1;
            a.committees[home].swap(pos, last);
            let mut dest = rng.gen_range(0..k - 1);
            if dest >= home {
                dest += 1;
            }
            a.committees[dest].push(evicted);
        }
    }
    rebalance(a, rng);
    Ok(())
}

fn rebalance(a: &mut CommitteeAssignment, rng: &mut impl Rng) {
    while let Some(over) = a.committees.iter().position(|m| m.len() > a.c) {
        let under: Vec<usize> = (0..a.committees.len()).filter(|&i| a.committees[i].len() < a.c).collect();
        let Some(&dest) = under.choose(rng) else { break };
        let pos = rng.gen_range(0..a.committees[over].len());
        let moved = a.committees[over].swap_remove(pos);
        a.committees[dest].push(moved);
    }
}

/// Credit history per node, as accumulated by the permission controller.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CreditLedger {
    records: BTreeMap<NodeId, Vec<(u64, f64)>>,
    pub warnings: Vec<String>,
}

impl CreditLedger {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        CreditLedger {
            records: nodes.into_iter().map(|n| (n, Vec::new())).collect(),
            warnings: Vec::new(),
        }
    }

    pub fn register(&mut self, node: NodeId) {
        self.records.entry(node).or_default();
    }

    pub fn remove(&mut self, node: NodeId) {
        self.records.remove(&node);
    }

    pub fn history(&self, node: NodeId) -> Option<&[(u64, f64)]> {
        self.records.get(&node).map(Vec::as_slice)
    }

    /// Appends one credit value per node: the mean of the committed weights
    /// its gradients received during `epoch`. Unknown nodes are ignored with
    /// a warning.
    pub fn update_credit(&mut self, weights: &[(NodeId, f64)], epoch: u64) {
        let mut per_node: BTreeMap<NodeId, (f64, usize)> = BTreeMap::new();
        for &(node, w) in weights {
            if !self.records.contains_key(&node) {
                self.warnings.push(format!("credit for unknown {node} ignored"));
                continue;
            }
            let e = per_node.entry(node).or_insert((0.0, 0));
            e.0 += w;
            e.1 += 1;
        }
        for (node, (sum, count)) in per_node {
            self.records
                .get_mut(&node)
                .expect("checked above")
                .push((epoch, sum / count as f64));
        }
    }

    /// Nodes whose mean credit over the last `credit_window` entries is
    /// below the floor. Nodes without records are kept.
    pub fn evict_low_credit(&self, policy: &AdmissionPolicy) -> BTreeSet<NodeId> {
        self.records
            .iter()
            .filter_map(|(&node, hist)| {
                let m = recent_mean(hist, policy.credit_window)?;
                (m < policy.credit_floor).then_some(node)
            })
            .collect()
    }
}

/// Configuration of the join/leave churn experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ChurnScenario {
    pub n: usize,
    pub c: usize,
    pub byzantine_fraction: f64,
    pub churn_fraction: f64,
    pub epochs: usize,
    pub k_evict: usize,
}

impl Default for ChurnScenario {
    /// 20% churn per epoch over 50 epochs with 25% byzantine nodes; committees
    /// of 200 keep the binomial tail past 1/3 under one percent.
    fn default() -> Self {
        ChurnScenario {
            n: 1000,
            c: 200,
            byzantine_fraction: 0.25,
            churn_fraction: 0.2,
            epochs: 50,
            k_evict: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ChurnStats {
    /// (epoch, committee) samples observed.
    pub samples: u64,
    /// Samples whose byzantine fraction stayed strictly below 1/3.
    pub safe_samples: u64,
    pub worst_fraction: f64,
}

impl ChurnStats {
    pub fn safe_rate(&self) -> f64 {
        if self.samples == 0 {
            1.0
        } else {
            self.safe_samples as f64 / self.samples as f64
        }
    }

    pub fn merge(self, o: ChurnStats) -> ChurnStats {
        ChurnStats {
            samples: self.samples + o.samples,
            safe_samples: self.safe_samples + o.safe_samples,
            worst_fraction: self.worst_fraction.max(o.worst_fraction),
        }
    }
}

/// Byzantine fraction of each committee.
pub fn byzantine_fractions(a: &CommitteeAssignment, is_byzantine: impl Fn(NodeId) -> bool) -> Vec<f64> {
    a.committees
        .iter()
        .map(|m| m.iter().filter(|&&id| is_byzantine(id)).count() as f64 / m.len().max(1) as f64)
        .collect()
}

/// Runs the churn scenario for one seed. Each epoch a `churn_fraction` of the
/// nodes leaves one at a time and rejoins under a fresh identity (the
/// adversary's join/leave attack keeps byzantine nodes byzantine); every
/// rejoin goes through [`cuckoo_reassign`]. Committees are sampled at the end
/// of every epoch, including the initial formation as epoch 0.
pub fn run_churn(s: &ChurnScenario, seed: u64) -> Result<ChurnStats, ShardingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<NodeId> = (0..s.n as u32).map(NodeId).collect();
    let mut assignment = form_committees(&ids, s.c, rng.gen())?;
    let byz_count = (s.byzantine_fraction * s.n as f64).round() as usize;
    let mut byzantine: HashSet<NodeId> = ids.choose_multiple(&mut rng, byz_count).copied().collect();
    let mut next_id = s.n as u32;
    let mut stats = ChurnStats::default();
    let sample = |a: &CommitteeAssignment, byz: &HashSet<NodeId>, stats: &mut ChurnStats| {
        for f in byzantine_fractions(a, |id| byz.contains(&id)) {
            stats.samples += 1;
            if f < 1.0 / 3.0 {
                stats.safe_samples += 1;
            }
            stats.worst_fraction = stats.worst_fraction.max(f);
        }
    };
    sample(&assignment, &byzantine, &mut stats);
    let per_epoch = (s.churn_fraction * s.n as f64).round() as usize;
    for _ in 0..s.epochs {
        for _ in 0..per_epoch {
            let mut idx = rng.gen_range(0..assignment.node_count());
            let mut departing = NodeId(0);
            for m in &mut assignment.committees {
                if idx < m.len() {
                    departing = m.swap_remove(idx);
                    break;
                }
                idx -= m.len();
            }
            let joiner = NodeId(next_id);
            next_id += 1;
            if byzantine.remove(&departing) {
                byzantine.insert(joiner);
            }
            cuckoo_reassign_in_place(&mut assignment, joiner, s.k_evict, &mut rng)?;
        }
        sample(&assignment, &byzantine, &mut stats);
    }
    Ok(stats)
}

//! Deterministic discrete-event engine with a serial-occupancy link model.
//!
//! Every node owns one uplink and one downlink. A message first occupies the
//! sender's uplink for `size / uplink_bw`, then travels for the link latency,
//! then occupies the receiver's downlink for `size / downlink_bw`. Both
//! directions are strictly serial: a transfer waits until the previous one on
//! the same direction has released it. There is no loss and no fair sharing.
//!
//! Units are decimal: 1 MB = 10^6 bytes and 1 Mbps = 10^6 bits per second.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Identity of a simulated participant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    /// Placeholder origin used for values produced by aggregation.
    pub const AGGREGATE: NodeId = NodeId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == NodeId::AGGREGATE {
            write!(f, "node-agg")
        } else {
            write!(f, "node-{}", self.0)
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("invalid message size {0}: must be positive")]
    InvalidSize(u64),
    #[error("invalid link profile: {0}")]
    InvalidLink(String),
    #[error("event scheduled at {at} which is before now ({now}) or not finite")]
    PastEvent { at: f64, now: f64 },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// Bandwidth and latency of one node's access link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub uplink_mbps: f64,
    pub downlink_mbps: f64,
    pub latency_ms: f64,
}

impl LinkProfile {
    pub fn new(uplink_mbps: f64, downlink_mbps: f64, latency_ms: f64) -> Result<Self, NetError> {
        let link = LinkProfile {
            uplink_mbps,
            downlink_mbps,
            latency_ms,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.uplink_mbps.is_finite() && self.uplink_mbps > 0.0) {
            return Err(NetError::InvalidLink(format!("uplink {} Mbps", self.uplink_mbps)));
        }
        if !(self.downlink_mbps.is_finite() && self.downlink_mbps > 0.0) {
            return Err(NetError::InvalidLink(format!(
                "downlink {} Mbps",
                self.downlink_mbps
            )));
        }
        if !(self.latency_ms.is_finite() && self.latency_ms >= 0.0) {
            return Err(NetError::InvalidLink(format!("latency {} ms", self.latency_ms)));
        }
        Ok(())
    }

    pub fn uplink_seconds(&self, size: u64) -> f64 {
        size as f64 * 8.0 / (self.uplink_mbps * 1e6)
    }

    pub fn downlink_seconds(&self, size: u64) -> f64 {
        size as f64 * 8.0 / (self.downlink_mbps * 1e6)
    }

    pub fn latency_seconds(&self) -> f64 {
        self.latency_ms / 1e3
    }
}

/// Occupancy intervals of one point-to-point transfer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transfer {
    pub uplink_start: f64,
    pub uplink_end: f64,
    pub downlink_start: f64,
    pub delivery: f64,
}

/// Computes a transfer given the current busy-until markers of the two
/// directions involved. Latency is taken from the sender's link.
pub fn transfer_time(
    size: u64,
    sender: &LinkProfile,
    receiver: &LinkProfile,
    send_start: f64,
    sender_uplink_busy_until: f64,
    receiver_downlink_busy_until: f64,
) -> Result<Transfer, NetError> {
    if size == 0 {
        return Err(NetError::InvalidSize(size));
    }
    let uplink_start = send_start.max(sender_uplink_busy_until);
    let uplink_end = uplink_start + sender.uplink_seconds(size);
    let downlink_start = (uplink_end + sender.latency_seconds()).max(receiver_downlink_busy_until);
    let delivery = downlink_start + receiver.downlink_seconds(size);
    Ok(Transfer {
        uplink_start,
        uplink_end,
        downlink_start,
        delivery,
    })
}

/// Per-node link state: profiles plus busy-until markers.
#[derive(Clone, Debug)]
pub struct Network {
    links: Vec<LinkProfile>,
    uplink_busy: Vec<f64>,
    downlink_busy: Vec<f64>,
    record_uplinks: bool,
    uplink_log: Vec<(NodeId, f64, f64)>,
}

impl Network {
    pub fn new(links: Vec<LinkProfile>) -> Self {
        let n = links.len();
        Network {
            links,
            uplink_busy: vec![0.0; n],
            downlink_busy: vec![0.0; n],
            record_uplinks: false,
            uplink_log: Vec::new(),
        }
    }

    /// Keeps every uplink occupancy interval, for invariant checks.
    pub fn record_uplinks(&mut self, on: bool) {
        self.record_uplinks = on;
    }

    pub fn uplink_log(&self) -> &[(NodeId, f64, f64)] {
        &self.uplink_log
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn link(&self, node: NodeId) -> Option<&LinkProfile> {
        self.links.get(node.index())
    }

    pub fn links(&self) -> &[LinkProfile] {
        &self.links
    }

    /// Adds a node and returns its identity.
    pub fn add_node(&mut self, link: LinkProfile) -> NodeId {
        self.links.push(link);
        self.uplink_busy.push(0.0);
        self.downlink_busy.push(0.0);
        NodeId(self.links.len() as u32 - 1)
    }

    pub fn uplink_busy_until(&self, node: NodeId) -> f64 {
        self.uplink_busy[node.index()]
    }

    pub fn downlink_busy_until(&self, node: NodeId) -> f64 {
        self.downlink_busy[node.index()]
    }

    /// Reserves both directions for one message and returns the intervals.
    pub fn transfer(
        &mut self,
        from: NodeId,
        to: NodeId,
        size: u64,
        send_start: f64,
    ) -> Result<Transfer, NetError> {
        let sender = *self.links.get(from.index()).ok_or(NetError::UnknownNode(from))?;
        let receiver = *self.links.get(to.index()).ok_or(NetError::UnknownNode(to))?;
        let t = transfer_time(
            size,
            &sender,
            &receiver,
            send_start,
            self.uplink_busy[from.index()],
            self.downlink_busy[to.index()],
        )?;
        self.uplink_busy[from.index()] = t.uplink_end;
        self.downlink_busy[to.index()] = t.delivery;
        if self.record_uplinks {
            self.uplink_log.push((from, t.uplink_start, t.uplink_end));
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind<M> {
    Delivery { from: NodeId, msg: M },
    Timer(M),
}

/// A scheduled event as handed to the dispatcher.
#[derive(Clone, Debug)]
pub struct SimEvent<M> {
    pub fire_time: f64,
    pub seq: u64,
    pub target: NodeId,
    pub tag: &'static str,
    pub kind: EventKind<M>,
}

impl<M> PartialEq for SimEvent<M> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<M> Eq for SimEvent<M> {}

impl<M> PartialOrd for SimEvent<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for SimEvent<M> {
    // Reversed so that BinaryHeap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Outcome of [`Simulation::run_until_idle`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOutcome {
    pub final_time: f64,
    pub truncated: bool,
    pub dispatched: u64,
}

/// Clock, event queue and network of one simulation run.
pub struct Simulation<M> {
    now: f64,
    next_seq: u64,
    queue: BinaryHeap<SimEvent<M>>,
    pub network: Network,
    trace: Sha256,
    dispatched: u64,
    warnings: Vec<String>,
}

impl<M: Clone> Simulation<M> {
    pub fn new(network: Network) -> Self {
        Simulation {
            now: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            network,
            trace: Sha256::new(),
            dispatched: 0,
            warnings: Vec::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Digest over every dispatched (time, seq, target, tag) tuple.
    pub fn trace_digest(&self) -> [u8; 32] {
        self.trace.clone().finalize().into()
    }

    fn push(&mut self, at: f64, target: NodeId, tag: &'static str, kind: EventKind<M>) -> Result<u64, NetError> {
        if !at.is_finite() || at < self.now {
            return Err(NetError::PastEvent { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(SimEvent {
            fire_time: at,
            seq,
            target,
            tag,
            kind,
        });
        Ok(seq)
    }

    pub fn schedule_timer(&mut self, at: f64, target: NodeId, tag: &'static str, msg: M) -> Result<u64, NetError> {
        self.push(at, target, tag, EventKind::Timer(msg))
    }

    /// Queues a delivery at an explicit time, bypassing the link model.
    pub fn schedule_delivery(
        &mut self,
        at: f64,
        from: NodeId,
        to: NodeId,
        tag: &'static str,
        msg: M,
    ) -> Result<u64, NetError> {
        self.push(at, to, tag, EventKind::Delivery { from, msg })
    }

    /// Sends one message over the link model starting now.
    pub fn send(&mut self, from: NodeId, to: NodeId, size: u64, tag: &'static str, msg: M) -> Result<f64, NetError> {
        self.send_with_delay(from, to, size, tag, msg, 0.0)
    }

    /// Like [`send`](Self::send) with an extra in-flight delay added to the
    /// delivery (used for pre-GST jitter).
    pub fn send_with_delay(
        &mut self,
        from: NodeId,
        to: NodeId,
        size: u64,
        tag: &'static str,
        msg: M,
        extra_delay: f64,
    ) -> Result<f64, NetError> {
        let t = self.network.transfer(from, to, size, self.now)?;
        let at = t.delivery + extra_delay.max(0.0);
        self.push(at, to, tag, EventKind::Delivery { from, msg })?;
        Ok(at)
    }

    /// Sends one copy per receiver, serially on the sender's uplink in the
    /// given receiver order. An empty receiver set is a no-op with a warning.
    pub fn broadcast(
        &mut self,
        from: NodeId,
        receivers: &[NodeId],
        size: u64,
        tag: &'static str,
        msg: M,
    ) -> Result<Vec<f64>, NetError> {
        if receivers.is_empty() {
            self.warnings
                .push(format!("t={:.6}: broadcast of {tag} from {from} with no receivers", self.now));
            return Ok(Vec::new());
        }
        if size == 0 {
            return Err(NetError::InvalidSize(size));
        }
        let mut out = Vec::with_capacity(receivers.len());
        for &to in receivers {
            out.push(self.send(from, to, size, tag, msg.clone())?);
        }
        Ok(out)
    }

    fn pop(&mut self) -> Option<SimEvent<M>> {
        let ev = self.queue.pop()?;
        debug_assert!(ev.fire_time >= self.now);
        self.now = ev.fire_time;
        self.dispatched += 1;
        self.trace.update(ev.fire_time.to_bits().to_le_bytes());
        self.trace.update(ev.seq.to_le_bytes());
        self.trace.update(ev.target.0.to_le_bytes());
        self.trace.update(ev.tag.as_bytes());
        Some(ev)
    }

    /// Dispatches events in (fire_time, seq) order until the queue is empty
    /// or the next event lies beyond `horizon`. Events past the horizon stay
    /// queued and the outcome is flagged as truncated.
    pub fn run_until_idle<F>(&mut self, horizon: Option<f64>, mut handler: F) -> RunOutcome
    where
        F: FnMut(&mut Simulation<M>, SimEvent<M>),
    {
        loop {
            let Some(next) = self.queue.peek() else {
                return RunOutcome {
                    final_time: self.now,
                    truncated: false,
                    dispatched: self.dispatched,
                };
            };
            if let Some(h) = horizon {
                if next.fire_time > h {
                    return RunOutcome {
                        final_time: self.now,
                        truncated: true,
                        dispatched: self.dispatched,
                    };
                }
            }
            let ev = self.pop().expect("peeked event");
            handler(self, ev);
        }
    }
}

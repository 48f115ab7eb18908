use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::aggregation::Gradient;
use crate::netsim::NodeId;

/// SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn short(&self) -> String {
        self.0[..4].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

/// Incremental canonical encoder feeding SHA-256.
pub(crate) struct Hasher(Sha256);

impl Hasher {
    pub fn new(domain: &str) -> Self {
        let mut h = Sha256::new();
        h.update((domain.len() as u32).to_le_bytes());
        h.update(domain.as_bytes());
        Hasher(h)
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        self.u64(vs.len() as u64);
        for v in vs {
            self.0.update(v.to_bits().to_le_bytes());
        }
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.0.update(d.0);
        self
    }

    pub fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

pub fn gradient_digest(g: &Gradient) -> Digest {
    let mut h = Hasher::new("gradient");
    h.f64s(&g.values).u64(g.payload_bytes).u64(g.origin.0 as u64).u64(g.iteration);
    h.finish()
}

pub fn params_digest(params: &[f64]) -> Digest {
    let mut h = Hasher::new("params");
    h.f64s(params);
    h.finish()
}

/// Evidence that a quorum of committee members voted for a block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumCertificate {
    pub committee: usize,
    pub view: u64,
    pub block_hash: Digest,
    pub signers: BTreeSet<NodeId>,
}

impl QuorumCertificate {
    /// Certificate for the genesis block; valid by convention.
    pub fn genesis(committee: usize) -> Self {
        QuorumCertificate {
            committee,
            view: 0,
            block_hash: genesis_hash(committee),
            signers: BTreeSet::new(),
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.view == 0 && self.block_hash == genesis_hash(self.committee)
    }

    /// Signers are distinct committee members and reach the quorum.
    pub fn verify(&self, members: &[NodeId]) -> bool {
        if self.is_genesis() {
            return true;
        }
        self.signers.len() >= quorum(members.len()) && self.signers.iter().all(|s| members.contains(s))
    }

    fn digest(&self) -> Digest {
        let mut h = Hasher::new("qc");
        h.u64(self.committee as u64).u64(self.view).digest(&self.block_hash);
        h.u64(self.signers.len() as u64);
        for s in &self.signers {
            h.u64(s.0 as u64);
        }
        h.finish()
    }
}

/// `floor(2c / 3) + 1`.
pub fn quorum(c: usize) -> usize {
    2 * c / 3 + 1
}

pub fn genesis_hash(committee: usize) -> Digest {
    let mut h = Hasher::new("genesis");
    h.u64(committee as u64);
    h.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    /// Folds a local selection into the carried token.
    Reduce,
    /// Commits a finished token verbatim.
    Gather,
}

/// A committed aggregation of another committee, with the header fields
/// needed to check that the certificate covers exactly this value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifiedAggregation {
    pub source_committee: usize,
    pub iteration: u64,
    pub round: usize,
    pub value: Gradient,
    /// Number of local gradients folded into `value`.
    pub count: u64,
    pub header_digest: Digest,
    pub qc: QuorumCertificate,
}

impl CertifiedAggregation {
    /// Checks the value binds to the certified block hash and the QC reaches
    /// quorum among `source_members`.
    pub fn verify(&self, source_members: &[NodeId]) -> bool {
        let expected = bind_hash(&self.header_digest, &result_digest(&self.value, self.count));
        self.qc.committee == self.source_committee
            && !self.qc.is_genesis()
            && self.qc.block_hash == expected
            && self.qc.verify(source_members)
    }
}

/// The three components of one consensus step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPayload {
    pub iteration: u64,
    pub round: usize,
    pub token: usize,
    pub kind: StepKind,
    /// Component 1: selected local gradients.
    pub selection: Vec<Gradient>,
    /// Component 2: neighbour (or own previous) aggregation.
    pub neighbor: Option<CertifiedAggregation>,
    /// Component 3: partial aggregation result.
    pub result: Gradient,
    pub result_count: u64,
    /// Per-selection detection weights as computed by the proposer.
    pub weights: Vec<f64>,
    pub model_digest: Digest,
}

fn result_digest(value: &Gradient, count: u64) -> Digest {
    let mut h = Hasher::new("result");
    h.digest(&gradient_digest(value)).u64(count);
    h.finish()
}

fn bind_hash(header: &Digest, result: &Digest) -> Digest {
    let mut h = Hasher::new("block");
    h.digest(header).digest(result);
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub committee: usize,
    pub view: u64,
    pub parent: Digest,
    pub justify: QuorumCertificate,
    pub payload: Option<StepPayload>,
    pub proposer: NodeId,
    pub hash: Digest,
}

impl Block {
    pub fn new(
        committee: usize,
        view: u64,
        parent: Digest,
        justify: QuorumCertificate,
        payload: Option<StepPayload>,
        proposer: NodeId,
    ) -> Self {
        let mut b = Block {
            committee,
            view,
            parent,
            justify,
            payload,
            proposer,
            hash: Digest::ZERO,
        };
        b.hash = b.compute_hash();
        b
    }

    /// Digest of every field except component 3.
    pub fn header_digest(&self) -> Digest {
        let mut h = Hasher::new("header");
        h.u64(self.committee as u64)
            .u64(self.view)
            .digest(&self.parent)
            .digest(&self.justify.digest())
            .u64(self.proposer.0 as u64);
        match &self.payload {
            None => {
                h.u64(0);
            }
            Some(p) => {
                h.u64(1).u64(p.iteration).u64(p.round as u64).u64(p.token as u64);
                h.u64(matches!(p.kind, StepKind::Gather) as u64);
                h.u64(p.selection.len() as u64);
                for g in &p.selection {
                    h.digest(&gradient_digest(g));
                }
                match &p.neighbor {
                    None => h.u64(0),
                    Some(n) => h.u64(1).digest(&n.qc.block_hash),
                };
                h.f64s(&p.weights).digest(&p.model_digest);
            }
        }
        h.finish()
    }

    pub fn compute_hash(&self) -> Digest {
        let result = match &self.payload {
            None => Digest::ZERO,
            Some(p) => result_digest(&p.result, p.result_count),
        };
        bind_hash(&self.header_digest(), &result)
    }

    pub fn hash_is_valid(&self) -> bool {
        self.hash == self.compute_hash()
    }

    pub fn certified(&self, qc: QuorumCertificate) -> Option<CertifiedAggregation> {
        let p = self.payload.as_ref()?;
        Some(CertifiedAggregation {
            source_committee: self.committee,
            iteration: p.iteration,
            round: p.round,
            value: p.result.clone(),
            count: p.result_count,
            header_digest: self.header_digest(),
            qc,
        })
    }
}

/// Simulated partial signature: (voter, view, block hash).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vote {
    pub committee: usize,
    pub voter: NodeId,
    pub view: u64,
    pub block_hash: Digest,
}

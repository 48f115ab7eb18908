//! Experiment configuration: one JSON document, strictly parsed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::ByzantineStrategy;
use crate::aggregation::{AggregatorKind, AggregatorSpec};
use crate::sharding::AdmissionPolicy;
use crate::training::TaskConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Pirate,
    Learningchain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub latency_ms: f64,
    pub uplink_min_mbps: f64,
    pub uplink_max_mbps: f64,
    pub downlink_mbps: f64,
    /// Wire size of votes, new-view messages and empty blocks.
    pub control_bytes: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            latency_ms: 10.0,
            uplink_min_mbps: 80.0,
            uplink_max_mbps: 240.0,
            downlink_mbps: 1000.0,
            control_bytes: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    /// Byzantine share of all nodes; ignored when `count` or `per_committee` is set.
    #[serde(default)]
    pub fraction: f64,
    #[serde(default)]
    pub count: Option<usize>,
    /// Place exactly this many byzantine nodes in every committee.
    #[serde(default)]
    pub per_committee: Option<usize>,
    pub strategy: ByzantineStrategy,
    /// Parameter vector omniscient crafters steer the model towards.
    #[serde(default)]
    pub target: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    /// Defaults to four times the slowest member's full-committee broadcast.
    pub view_timeout_s: Option<f64>,
    pub handoff_timeout_s: Option<f64>,
    /// Global stabilization time; before it messages carry random extra delay.
    pub gst_s: f64,
    pub pre_gst_jitter_s: f64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            view_timeout_s: None,
            handoff_timeout_s: None,
            gst_s: 0.0,
            pre_gst_jitter_s: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconfigConfig {
    pub enabled: bool,
    /// Iterations between reconfigurations.
    pub interval: u64,
    pub k_evict: usize,
}

impl Default for ReconfigConfig {
    fn default() -> Self {
        ReconfigConfig {
            enabled: true,
            interval: 50,
            k_evict: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub framework: Framework,
    pub seed: u64,
    pub n: usize,
    #[serde(default)]
    pub c: Option<usize>,
    #[serde(default)]
    pub gradients_per_step: Option<usize>,
    #[serde(default)]
    pub aggregator: Option<AggregatorSpec>,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub adversary: Option<AdversaryConfig>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default = "default_payload")]
    pub payload_bytes: u64,
    pub iterations: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub reconfiguration: ReconfigConfig,
    #[serde(default)]
    pub admission: AdmissionPolicy,
    #[serde(default)]
    pub mining_delay_s: f64,
    #[serde(default)]
    pub compute_time_s: f64,
    /// Simulated-time budget; exceeding it is a liveness failure.
    #[serde(default)]
    pub max_simulated_time_s: Option<f64>,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_payload() -> u64 {
    28_000_000
}

fn default_lr() -> f64 {
    0.05
}

impl ExperimentConfig {
    /// Minimal config with defaults for everything but the essentials.
    pub fn new(framework: Framework, n: usize, c: Option<usize>, iterations: u64, seed: u64) -> Self {
        ExperimentConfig {
            framework,
            seed,
            n,
            c,
            gradients_per_step: None,
            aggregator: None,
            task: TaskConfig::default(),
            adversary: None,
            network: NetworkConfig::default(),
            payload_bytes: default_payload(),
            iterations,
            learning_rate: default_lr(),
            consensus: ConsensusConfig::default(),
            reconfiguration: ReconfigConfig::default(),
            admission: AdmissionPolicy::default(),
            mining_delay_s: 0.0,
            compute_time_s: 0.0,
            max_simulated_time_s: None,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(v).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn committee_size(&self) -> usize {
        self.c.unwrap_or(self.n)
    }

    pub fn committee_count(&self) -> usize {
        match self.framework {
            Framework::Pirate => self.n / self.committee_size(),
            Framework::Learningchain => 1,
        }
    }

    /// Nodes taking part in committees; the rest wait for a vacancy.
    pub fn active_nodes(&self) -> usize {
        match self.framework {
            Framework::Pirate => self.committee_count() * self.committee_size(),
            Framework::Learningchain => self.n,
        }
    }

    /// `max(1, round(c^2 / n_active))`, capped at `c`.
    pub fn resolved_gradients_per_step(&self) -> usize {
        let c = self.committee_size();
        self.gradients_per_step.unwrap_or_else(|| {
            let n = self.active_nodes().max(1) as f64;
            ((c * c) as f64 / n).round().max(1.0) as usize
        })
        .min(c)
    }

    pub fn resolved_aggregator(&self) -> AggregatorSpec {
        self.aggregator.clone().unwrap_or_else(|| match self.framework {
            Framework::Pirate => AggregatorSpec::detection_weighted(3.0),
            Framework::Learningchain => AggregatorSpec::of(AggregatorKind::LNearest),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        let c = self.committee_size();
        if self.framework == Framework::Pirate && (c == 0 || c > self.n) {
            return bad(format!("committee size {c} must be in 1..=n ({})", self.n));
        }
        if self.gradients_per_step == Some(0) {
            return bad("gradients_per_step must be positive".into());
        }
        if self.payload_bytes == 0 {
            return bad("payload_bytes must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        let net = &self.network;
        let links_ok = net.uplink_min_mbps > 0.0
            && net.uplink_max_mbps >= net.uplink_min_mbps
            && net.uplink_max_mbps.is_finite()
            && net.downlink_mbps > 0.0
            && net.downlink_mbps.is_finite()
            && net.latency_ms >= 0.0
            && net.latency_ms.is_finite();
        if !links_ok {
            return bad("network: bandwidths must be positive, latency non-negative".into());
        }
        if let Some(a) = &self.adversary {
            a.strategy.validate().map_err(ConfigError::Invalid)?;
            if !(0.0..=1.0).contains(&a.fraction) {
                return bad(format!("adversary.fraction {} outside [0, 1]", a.fraction));
            }
            if a.count.is_some_and(|k| k > self.n) {
                return bad("adversary.count exceeds n".into());
            }
            if a.per_committee.is_some_and(|k| k > c) {
                return bad("adversary.per_committee exceeds c".into());
            }
            if a.target.as_ref().is_some_and(|t| t.len() != self.task.dimension) {
                return bad("adversary.target must match task.dimension".into());
            }
        }
        if let Some(agg) = &self.aggregator {
            agg.validate().map_err(|e| ConfigError::Invalid(format!("aggregator: {e}")))?;
        }
        if self.reconfiguration.interval == 0 {
            return bad("reconfiguration.interval must be positive".into());
        }
        for (name, v) in [
            ("mining_delay_s", self.mining_delay_s),
            ("compute_time_s", self.compute_time_s),
            ("consensus.gst_s", self.consensus.gst_s),
            ("consensus.pre_gst_jitter_s", self.consensus.pre_gst_jitter_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if self.task.dimension == 0 || self.task.samples_per_node == 0 {
            return bad("task.dimension and task.samples_per_node must be positive".into());
        }
        Ok(())
    }
}

//! Synthetic learning tasks, local gradients and model updates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::Gradient;
use crate::consensus::{params_digest, Digest};
use crate::netsim::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum TrainingError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: model {model}, gradient {gradient}")]
    DimensionMismatch { model: usize, gradient: usize },
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    LeastSquares,
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShardingMode {
    Iid,
    NonIidByLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub dimension: usize,
    pub samples_per_node: usize,
    pub held_out: usize,
    pub noise: f64,
    pub sharding: ShardingMode,
    /// Mini-batch size; `None` uses the whole shard.
    pub batch_size: Option<usize>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            kind: TaskKind::LeastSquares,
            dimension: 10,
            samples_per_node: 20,
            held_out: 200,
            noise: 0.1,
            sharding: ShardingMode::Iid,
            batch_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Clone, Debug)]
pub struct LearningTask {
    pub kind: TaskKind,
    pub dimension: usize,
    pub shards: Vec<Vec<Sample>>,
    pub held_out: Vec<Sample>,
    /// Generating parameters; harness only.
    pub true_params: Vec<f64>,
    pub batch_size: Option<usize>,
    seed: u64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LearningTask {
    pub fn generate(cfg: &TaskConfig, nodes: usize, seed: u64) -> Result<Self, TrainingError> {
        if cfg.dimension == 0 || cfg.samples_per_node == 0 || nodes == 0 {
            return Err(TrainingError::InvalidTask("dimension, samples and nodes must be positive".into()));
        }
        if !(cfg.noise.is_finite() && cfg.noise >= 0.0) {
            return Err(TrainingError::InvalidTask(format!("noise {}", cfg.noise)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_0001);
        let d = cfg.dimension;
        let true_params: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let draw = |rng: &mut ChaCha8Rng| {
            let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let z = dot(&x, &true_params);
            let y = match cfg.kind {
                TaskKind::LeastSquares => z + cfg.noise * rng.sample::<f64, _>(StandardNormal),
                TaskKind::Logistic => (rng.gen::<f64>() < sigmoid(z)) as u8 as f64,
            };
            Sample { x, y }
        };
        let mut all: Vec<Sample> = (0..nodes * cfg.samples_per_node).map(|_| draw(&mut rng)).collect();
        let held_out: Vec<Sample> = (0..cfg.held_out.max(1)).map(|_| draw(&mut rng)).collect();
        if cfg.sharding == ShardingMode::NonIidByLabel {
            all.sort_by(|a, b| a.y.total_cmp(&b.y));
        }
        let shards = all.chunks(cfg.samples_per_node).map(|c| c.to_vec()).collect();
        Ok(LearningTask {
            kind: cfg.kind,
            dimension: d,
            shards,
            held_out,
            true_params,
            batch_size: cfg.batch_size,
            seed,
        })
    }

    /// Indices into a node's shard used at `iteration`.
    pub fn batch(&self, node: usize, iteration: u64) -> Vec<usize> {
        let len = self.shards[node].len();
        match self.batch_size {
            Some(b) if b < len => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((node as u64) << 32) ^ iteration.wrapping_mul(0x9e37_79b9));
                let mut idx: Vec<usize> = (0..len).collect();
                idx.shuffle(&mut rng);
                idx.truncate(b);
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        }
    }

    /// Mean per-sample loss over `samples`.
    pub fn loss_on(&self, params: &[f64], samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples.iter().map(|s| sample_loss(self.kind, params, s)).sum();
        total / samples.len() as f64
    }

    /// Loss on the held-out oracle set.
    pub fn loss(&self, params: &[f64]) -> f64 {
        self.loss_on(params, &self.held_out)
    }

    pub fn local_gradient(
        &self,
        model: &ModelState,
        node: usize,
        origin: NodeId,
        payload_bytes: u64,
    ) -> Result<Gradient, TrainingError> {
        let shard = &self.shards[node];
        let batch: Vec<&Sample> = self.batch(node, model.iteration).into_iter().map(|i| &shard[i]).collect();
        let values = batch_gradient(self.kind, &model.params, &batch)?;
        Ok(Gradient {
            values,
            payload_bytes,
            origin,
            iteration: model.iteration,
        })
    }
}

fn sample_loss(kind: TaskKind, w: &[f64], s: &Sample) -> f64 {
    let z = dot(&s.x, w);
    match kind {
        TaskKind::LeastSquares => 0.5 * (z - s.y).powi(2),
        // log(1 + e^z) - y z, stable in both tails
        TaskKind::Logistic => z.max(0.0) + (-z.abs()).exp().ln_1p() - s.y * z,
    }
}

/// Exact gradient of the mean loss over `batch`.
pub fn batch_gradient(kind: TaskKind, w: &[f64], batch: &[&Sample]) -> Result<Vec<f64>, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    let mut g = vec![0.0; w.len()];
    for s in batch {
        let z = dot(&s.x, w);
        let r = match kind {
            TaskKind::LeastSquares => z - s.y,
            TaskKind::Logistic => sigmoid(z) - s.y,
        };
        for (gi, xi) in g.iter_mut().zip(&s.x) {
            *gi += r * xi;
        }
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub iteration: u64,
    pub digest: Digest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Non-finite aggregation; parameters kept.
    Skipped,
}

impl ModelState {
    pub fn new(params: Vec<f64>) -> Self {
        let digest = params_digest(&params);
        ModelState {
            params,
            iteration: 0,
            digest,
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self::new(vec![0.0; d])
    }

    pub fn refresh_digest(&mut self) {
        self.digest = params_digest(&self.params);
    }
}

/// `params -= lr * aggregated`; always advances the iteration counter.
pub fn apply_update(model: &mut ModelState, aggregated: &Gradient, learning_rate: f64) -> Result<UpdateOutcome, TrainingError> {
    if aggregated.dim() != model.params.len() {
        return Err(TrainingError::DimensionMismatch {
            model: model.params.len(),
            gradient: aggregated.dim(),
        });
    }
    model.iteration += 1;
    let next: Vec<f64> = model
        .params
        .iter()
        .zip(&aggregated.values)
        .map(|(p, g)| p - learning_rate * g)
        .collect();
    if !learning_rate.is_finite() || next.iter().any(|v| !v.is_finite()) {
        log::warn!("non-finite update at iteration {} skipped", model.iteration);
        return Ok(UpdateOutcome::Skipped);
    }
    model.params = next;
    model.refresh_digest();
    Ok(UpdateOutcome::Applied)
}

/// Centralized SGD over the same batches: flat mean of every node's local
/// gradient each iteration. Returns the loss after each update.
pub fn centralized_oracle(task: &LearningTask, learning_rate: f64, iterations: u64) -> Result<(Vec<f64>, ModelState), TrainingError> {
    let mut model = ModelState::zeros(task.dimension);
    let mut losses = Vec::with_capacity(iterations as usize);
    for _ in 0..iterations {
        let mut acc = vec![0.0; task.dimension];
        for node in 0..task.shards.len() {
            let g = task.local_gradient(&model, node, NodeId(node as u32), 1)?;
            acc.iter_mut().zip(&g.values).for_each(|(a, v)| *a += v);
        }
        let n = task.shards.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        apply_update(&mut model, &Gradient::from_values(acc), learning_rate)?;
        losses.push(task.loss(&model.params));
    }
    Ok((losses, model))
}

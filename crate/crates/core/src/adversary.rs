//! Byzantine strategies injected into node handlers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregation::Gradient;
use crate::consensus::StepPayload;
use crate::sharding::StrategyTag;
use crate::training::ModelState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineStrategy {
    pub kind: StrategyTag,
    #[serde(default = "one")]
    pub magnitude: f64,
    /// Standard deviation of the seeded noise added by harmful-gradient.
    #[serde(default)]
    pub noise: f64,
}

fn one() -> f64 {
    1.0
}

impl ByzantineStrategy {
    pub fn new(kind: StrategyTag, magnitude: f64) -> Self {
        ByzantineStrategy { kind, magnitude, noise: 0.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.magnitude.is_finite() || !self.noise.is_finite() || self.noise < 0.0 {
            return Err(format!("magnitude {} / noise {} must be finite", self.magnitude, self.noise));
        }
        Ok(())
    }

    pub fn corrupts_gradient(&self) -> bool {
        matches!(self.kind, StrategyTag::HarmfulGradient | StrategyTag::OmniscientCraft)
    }
}

/// What the harness reveals to an omniscient adversary about one selection.
#[derive(Clone, Debug)]
pub struct OmniscientView<'a> {
    /// Honest gradients in the same selection.
    pub others: &'a [Gradient],
    /// Colluders in the selection, including the caller.
    pub colluders: usize,
    /// Vector the mean of the full selection should equal.
    pub target_mean: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corrupted {
    pub gradient: Gradient,
    /// Set when omniscient-craft lacked visibility and fell back.
    pub fell_back: bool,
}

/// Deterministic per-(seed, node, iteration) noise stream.
pub fn adversary_rng(seed: u64, node: u32, iteration: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0xad5e_0000_0000 ^ ((node as u64) << 20) ^ iteration.rotate_left(40))
}

pub fn corrupt_gradient(honest: &Gradient, strategy: &ByzantineStrategy, view: Option<&OmniscientView<'_>>, rng: &mut ChaCha8Rng) -> Corrupted {
    let harmful = |rng: &mut ChaCha8Rng| {
        let mut g = honest.clone();
        for v in g.values.iter_mut() {
            let noise: f64 = if strategy.noise > 0.0 {
                strategy.noise * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            *v = -strategy.magnitude * *v + noise;
        }
        g
    };
    match strategy.kind {
        StrategyTag::OmniscientCraft => match view {
            Some(v) if v.colluders > 0 && v.target_mean.len() == honest.dim() => {
                let n = (v.others.len() + v.colluders) as f64;
                let mut g = honest.clone();
                for (i, out) in g.values.iter_mut().enumerate() {
                    let sum: f64 = v.others.iter().map(|o| o.values[i]).sum();
                    *out = (n * v.target_mean[i] - sum) / v.colluders as f64;
                }
                Corrupted { gradient: g, fell_back: false }
            }
            _ => Corrupted {
                gradient: harmful(rng),
                fell_back: true,
            },
        },
        StrategyTag::HarmfulGradient => Corrupted {
            gradient: harmful(rng),
            fell_back: false,
        },
        _ => Corrupted {
            gradient: honest.clone(),
            fell_back: false,
        },
    }
}

/// Replaces component 3 with an adversary-chosen vector.
pub fn falsify_payload(payload: &mut StepPayload, strategy: &ByzantineStrategy, rng: &mut ChaCha8Rng) {
    for v in payload.result.values.iter_mut() {
        *v += strategy.magnitude.max(1.0) * (1.0 + rng.gen::<f64>());
    }
}

/// Perturbs a node's parameters by `magnitude` times seeded noise.
pub fn contaminate_model(model: &mut ModelState, strategy: &ByzantineStrategy, rng: &mut ChaCha8Rng) {
    if strategy.magnitude == 0.0 {
        return;
    }
    for p in model.params.iter_mut() {
        *p += strategy.magnitude * rng.sample::<f64, _>(StandardNormal);
    }
    model.refresh_digest();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[f64]) -> Gradient {
        Gradient::from_values(v.to_vec())
    }

    #[test]
    fn harmful_flips_sign() {
        let s = ByzantineStrategy::new(StrategyTag::HarmfulGradient, 1.0);
        let mut rng = adversary_rng(0, 0, 0);
        assert_eq!(corrupt_gradient(&g(&[1.0, 1.0]), &s, None, &mut rng).gradient.values, vec![-1.0, -1.0]);
    }

    #[test]
    fn omniscient_solves_for_target() {
        let s = ByzantineStrategy::new(StrategyTag::OmniscientCraft, 1.0);
        let others = [g(&[1.0, 1.0]), g(&[1.0, 1.0]), g(&[1.0, 1.0])];
        let view = OmniscientView {
            others: &others,
            colluders: 1,
            target_mean: &[0.0, 0.0],
        };
        let mut rng = adversary_rng(0, 0, 0);
        let out = corrupt_gradient(&g(&[5.0, 5.0]), &s, Some(&view), &mut rng);
        assert_eq!(out.gradient.values, vec![-3.0, -3.0]);
        assert!(!out.fell_back);
        let blind = corrupt_gradient(&g(&[5.0, 5.0]), &s, None, &mut rng);
        assert!(blind.fell_back);
        assert_eq!(blind.gradient.values, vec![-5.0, -5.0]);
    }

    #[test]
    fn zero_magnitude_contamination_keeps_digest() {
        let mut m = ModelState::new(vec![1.0, 2.0]);
        let d = m.digest;
        let mut rng = adversary_rng(1, 2, 3);
        contaminate_model(&mut m, &ByzantineStrategy::new(StrategyTag::ContaminateModel, 0.0), &mut rng);
        assert_eq!(m.digest, d);
        contaminate_model(&mut m, &ByzantineStrategy::new(StrategyTag::ContaminateModel, 0.5), &mut rng);
        assert_ne!(m.digest, d);
    }
}

//! Ring-ordered reduce and gather of committed partial aggregations.
//!
//! Each committee owns one token per iteration. In reduce round `r`,
//! committee `j` holds token `(j - r) mod K`, folds its `r`-th local
//! selection into it and hands the committed result clockwise to `j + 1`.
//! After the last reduce round every token is final; the gather rounds pass
//! the final tokens around the ring once more, each committee committing them
//! verbatim. When the selection size equals `c^2 / n` there are exactly `K`
//! reduce rounds and the ring performs `2 (K - 1)` inter-committee handoffs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{self, AggregationError, AggregatorKind, AggregatorSpec, Gradient};
use crate::netsim::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum RingError {
    #[error("ring needs at least one committee and one selection round")]
    Empty,
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("selection schedule does not match the ring shape: {0}")]
    Shape(String),
}

/// Static shape of one iteration's ring schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingSchedule {
    pub committee_count: usize,
    /// Local selections per committee (`ceil(c / gradients_per_step)`).
    pub reduce_rounds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Reduce,
    Gather,
}

impl RingSchedule {
    pub fn new(c: usize, committee_count: usize, gradients_per_step: usize) -> Result<Self, RingError> {
        if c == 0 || committee_count == 0 || gradients_per_step == 0 {
            return Err(RingError::Empty);
        }
        Ok(RingSchedule {
            committee_count,
            reduce_rounds: c.div_ceil(gradients_per_step),
        })
    }

    pub fn gather_rounds(&self) -> usize {
        self.committee_count - 1
    }

    pub fn total_rounds(&self) -> usize {
        self.reduce_rounds + self.gather_rounds()
    }

    pub fn phase(&self, round: usize) -> Phase {
        if round < self.reduce_rounds {
            Phase::Reduce
        } else {
            Phase::Gather
        }
    }

    pub fn token(&self, committee: usize, round: usize) -> usize {
        let k = self.committee_count;
        (committee + k - round % k) % k
    }

    /// Committee whose committed result feeds `committee` in `round`.
    /// Round 0 has no input; with a single committee the input is its own
    /// previous round.
    pub fn input_from(&self, committee: usize, round: usize) -> Option<usize> {
        if round == 0 {
            return None;
        }
        let k = self.committee_count;
        Some((committee + k - 1) % k)
    }

    /// Whether the result of `round` at a committee is one of the final tokens
    /// that make up the global aggregation.
    pub fn is_final(&self, round: usize) -> bool {
        round + 1 >= self.reduce_rounds && round < self.total_rounds()
    }

    /// Inter-committee handoffs each committee receives per iteration.
    pub fn handoffs_per_committee(&self) -> usize {
        if self.committee_count == 1 {
            0
        } else {
            self.total_rounds() - 1
        }
    }
}

/// `2 (n / c - 1)`.
pub fn inter_committee_steps(committee_count: usize) -> usize {
    2 * committee_count.saturating_sub(1)
}

/// Members whose gradients form selection `round` (round-robin by member index).
pub fn selection_indices(c: usize, gradients_per_step: usize, round: usize) -> std::ops::Range<usize> {
    let start = (round * gradients_per_step).min(c);
    let end = ((round + 1) * gradients_per_step).min(c);
    start..end
}

/// A token value in flight: the aggregate and how many local gradients it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub value: Gradient,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldOutcome {
    pub token: Token,
    /// Weights of the selection inputs only (credit signal).
    pub selection_weights: Vec<f64>,
    pub fallback: bool,
}

/// One reduce step: the carried token enters the aggregator as one more input
/// next to the selection. For the mean, the carried token is weighted by its
/// count so that the fold equals the flat mean of everything folded so far.
pub fn fold_step(spec: &AggregatorSpec, selection: &[Gradient], carried: Option<&Token>) -> Result<FoldOutcome, RingError> {
    let folded = selection.len() as u64 + carried.map_or(0, |t| t.count);
    let mut inputs: Vec<Gradient> = selection.to_vec();
    if let Some(t) = carried {
        inputs.push(t.value.clone());
    }
    if inputs.is_empty() {
        return Err(RingError::Empty);
    }
    let payload = inputs.iter().map(|g| g.payload_bytes).max().unwrap_or(1);
    if spec.kind == AggregatorKind::Mean {
        let mut w = vec![1.0; selection.len()];
        if let Some(t) = carried {
            w.push(t.count as f64);
        }
        let mut value = aggregation::weighted_mean(&inputs, &w)?;
        value.payload_bytes = payload;
        return Ok(FoldOutcome {
            token: Token { value, count: folded },
            selection_weights: vec![1.0; selection.len()],
            fallback: false,
        });
    }
    let agg = if spec.kind == AggregatorKind::Krum || spec.kind == AggregatorKind::MultiKrum {
        // Krum needs n - f - 2 >= 1; degrade to the mean on undersized steps
        if inputs.len() < spec.f + 3 {
            let mut a = aggregation::aggregate(&AggregatorSpec::mean(), &inputs)?;
            a.fallback = true;
            a
        } else {
            aggregation::aggregate(spec, &inputs)?
        }
    } else {
        aggregation::aggregate(spec, &inputs)?
    };
    let mut value = agg.gradient;
    value.payload_bytes = payload;
    value.origin = NodeId::AGGREGATE;
    Ok(FoldOutcome {
        token: Token { value, count: folded },
        selection_weights: agg.weights[..selection.len()].to_vec(),
        fallback: agg.fallback,
    })
}

/// Count-weighted mean of the final tokens, taken in token-index order.
pub fn final_combine(tokens: &[Token]) -> Result<Gradient, RingError> {
    if tokens.is_empty() {
        return Err(RingError::Empty);
    }
    let values: Vec<Gradient> = tokens.iter().map(|t| t.value.clone()).collect();
    let weights: Vec<f64> = tokens.iter().map(|t| t.count as f64).collect();
    Ok(aggregation::weighted_mean(&values, &weights)?)
}

/// Central replay of one iteration: `selections[j][r]` is the `r`-th selection
/// of committee `j`. Folds every token along its ring path exactly as the
/// protocol does and combines the final tokens.
pub fn oracle_aggregate(
    spec: &AggregatorSpec,
    schedule: &RingSchedule,
    selections: &[Vec<Vec<Gradient>>],
) -> Result<Gradient, RingError> {
    let k = schedule.committee_count;
    if selections.len() != k || selections.iter().any(|s| s.len() != schedule.reduce_rounds) {
        return Err(RingError::Shape(format!(
            "expected {k} committees with {} selections each",
            schedule.reduce_rounds
        )));
    }
    let mut finals: Vec<Option<Token>> = vec![None; k];
    for (token, slot) in finals.iter_mut().enumerate() {
        let mut carried: Option<Token> = None;
        for r in 0..schedule.reduce_rounds {
            let out = fold_step(spec, &selections[(token + r) % k][r], carried.as_ref())?;
            carried = Some(out.token);
        }
        *slot = carried;
    }
    let tokens: Vec<Token> = finals.into_iter().map(|t| t.expect("every token folded")).collect();
    final_combine(&tokens)
}

/// Progress of one committee through an iteration's ring schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct RingState {
    pub schedule: RingSchedule,
    pub committee: usize,
    /// Next round to commit.
    pub step_index: usize,
    pub handoffs_received: usize,
    pub finals: Vec<Option<Token>>,
}

impl RingState {
    pub fn new(schedule: RingSchedule, committee: usize) -> Self {
        RingState {
            schedule,
            committee,
            step_index: 0,
            handoffs_received: 0,
            finals: vec![None; schedule.committee_count],
        }
    }

    pub fn phase(&self) -> Phase {
        self.schedule.phase(self.step_index)
    }

    /// Records a committed round; returns true once every final token is held.
    pub fn commit(&mut self, round: usize, token: Token) -> bool {
        debug_assert_eq!(round, self.step_index, "rounds commit in order");
        if self.schedule.is_final(round) {
            let idx = self.schedule.token(self.committee, round);
            self.finals[idx] = Some(token);
        }
        self.step_index = round + 1;
        self.is_complete()
    }

    pub fn is_complete(&self) -> bool {
        self.step_index >= self.schedule.total_rounds()
    }

    pub fn final_aggregation(&self) -> Option<Result<Gradient, RingError>> {
        if !self.is_complete() {
            return None;
        }
        let tokens: Vec<Token> = self.finals.iter().cloned().collect::<Option<Vec<_>>>()?;
        Some(final_combine(&tokens))
    }
}

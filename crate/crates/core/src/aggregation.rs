//! Byzantine-tolerant gradient aggregation.
//!
//! Operators: plain mean, Krum, Multi-Krum, l-nearest (cosine distance to the
//! sum of inputs) and detection-weighted averaging driven by an anomaly
//! detector. Ties are broken by the lowest input index everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("no gradients to aggregate")]
    Empty,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("krum requires n - f - 2 >= 1, got n = {n}, f = {f}")]
    TooFewForKrum { n: usize, f: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("gradient has zero dimension or non-finite values")]
    InvalidGradient,
}

pub type Result<T> = std::result::Result<T, AggregationError>;

/// Local gradient (or aggregate) with the byte size it occupies on the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub values: Vec<f64>,
    pub payload_bytes: u64,
    pub origin: NodeId,
    pub iteration: u64,
}

impl Gradient {
    pub fn new(values: Vec<f64>, payload_bytes: u64, origin: NodeId, iteration: u64) -> Result<Self> {
        let g = Gradient {
            values,
            payload_bytes,
            origin,
            iteration,
        };
        if g.values.is_empty() || !g.is_finite() || payload_bytes == 0 {
            return Err(AggregationError::InvalidGradient);
        }
        Ok(g)
    }

    /// Convenience constructor for tests and tools: 1-byte payload, origin 0.
    pub fn from_values(values: Vec<f64>) -> Self {
        Gradient {
            values,
            payload_bytes: 1,
            origin: NodeId(0),
            iteration: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    Mean,
    Krum,
    MultiKrum,
    LNearest,
    DetectionWeighted,
}

/// Operator choice plus its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    /// Assumed byzantine count for the Krum family.
    #[serde(default)]
    pub f: usize,
    /// Multi-Krum selection count; defaults to `n - f` at call time.
    #[serde(default)]
    pub m: Option<usize>,
    /// l-nearest selection count; defaults to `ceil(0.7 n)` at call time.
    #[serde(default)]
    pub l: Option<usize>,
    #[serde(default = "default_threshold")]
    pub detection_threshold: f64,
}

fn default_threshold() -> f64 {
    3.0
}

impl AggregatorSpec {
    pub fn mean() -> Self {
        Self::of(AggregatorKind::Mean)
    }

    pub fn of(kind: AggregatorKind) -> Self {
        AggregatorSpec {
            kind,
            f: 0,
            m: None,
            l: None,
            detection_threshold: default_threshold(),
        }
    }

    pub fn detection_weighted(threshold: f64) -> Self {
        AggregatorSpec {
            detection_threshold: threshold,
            ..Self::of(AggregatorKind::DetectionWeighted)
        }
    }

    pub fn krum(f: usize) -> Self {
        AggregatorSpec {
            f,
            ..Self::of(AggregatorKind::Krum)
        }
    }

    pub fn multi_krum(f: usize, m: Option<usize>) -> Self {
        AggregatorSpec {
            f,
            m,
            ..Self::of(AggregatorKind::MultiKrum)
        }
    }

    pub fn l_nearest(l: Option<usize>) -> Self {
        AggregatorSpec {
            l,
            ..Self::of(AggregatorKind::LNearest)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.detection_threshold.is_finite() && self.detection_threshold > 0.0) {
            return Err(AggregationError::InvalidParameter(format!(
                "detection_threshold must be positive, got {}",
                self.detection_threshold
            )));
        }
        if self.m == Some(0) || self.l == Some(0) {
            return Err(AggregationError::InvalidParameter("m and l must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of [`aggregate`] with the per-input weights and instrumentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub gradient: Gradient,
    /// Per-input weight: detection weight for detection-weighted, 1/0 for
    /// selected/excluded inputs of the selection operators, 1 for mean.
    pub weights: Vec<f64>,
    /// Set when an operator fell back to a default combiner.
    pub fallback: bool,
    /// Number of vector distances evaluated.
    pub distance_evals: usize,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_inputs(gradients: &[Gradient]) -> Result<usize> {
    let first = gradients.first().ok_or(AggregationError::Empty)?;
    let d = first.dim();
    if d == 0 {
        return Err(AggregationError::InvalidGradient);
    }
    for g in gradients {
        if g.dim() != d {
            return Err(AggregationError::DimensionMismatch {
                expected: d,
                found: g.dim(),
            });
        }
    }
    Ok(d)
}

fn output(values: Vec<f64>, inputs: &[Gradient]) -> Gradient {
    Gradient {
        values,
        payload_bytes: inputs.iter().map(|g| g.payload_bytes).max().unwrap_or(1),
        origin: NodeId::AGGREGATE,
        iteration: inputs.iter().map(|g| g.iteration).max().unwrap_or(0),
    }
}

/// Weighted coordinate-wise average; weights must not all be zero.
pub fn weighted_mean(gradients: &[Gradient], weights: &[f64]) -> Result<Gradient> {
    let d = check_inputs(gradients)?;
    if weights.len() != gradients.len() {
        return Err(AggregationError::InvalidParameter("one weight per gradient required".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(AggregationError::InvalidParameter(format!("weight sum {total}")));
    }
    let mut acc = vec![0.0; d];
    for (g, &w) in gradients.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(&g.values) {
            *a += w * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(output(acc, gradients))
}

pub fn mean(gradients: &[Gradient]) -> Result<Gradient> {
    let d = check_inputs(gradients)?;
    let mut acc = vec![0.0; d];
    for g in gradients {
        for (a, v) in acc.iter_mut().zip(&g.values) {
            *a += v;
        }
    }
    let n = gradients.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(output(acc, gradients))
}

/// Coordinate-wise median (mean of the two middle values for even counts).
pub fn coordinate_median(gradients: &[Gradient]) -> Result<Gradient> {
    let d = check_inputs(gradients)?;
    let mut col = Vec::with_capacity(gradients.len());
    let values = (0..d)
        .map(|k| {
            col.clear();
            col.extend(gradients.iter().map(|g| g.values[k]));
            median_in_place(&mut col)
        })
        .collect();
    Ok(output(values, gradients))
}

fn median_in_place(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Krum scores: for each input, the sum of squared distances to its
/// `n - f - 2` nearest other inputs. Also returns the number of pairwise
/// distances evaluated, which is always `n (n - 1) / 2`.
pub fn krum_scores(gradients: &[Gradient], f: usize) -> Result<(Vec<f64>, usize)> {
    check_inputs(gradients)?;
    let n = gradients.len();
    if n < f + 3 {
        return Err(AggregationError::TooFewForKrum { n, f });
    }
    let k = n - f - 2;
    let mut dist = vec![vec![0.0; n]; n];
    let mut evals = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(&gradients[i].values, &gradients[j].values);
            dist[i][j] = d;
            dist[j][i] = d;
            evals += 1;
        }
    }
    let scores = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            row.sort_by(|a, b| a.total_cmp(b));
            row[..k].iter().sum()
        })
        .collect();
    Ok((scores, evals))
}

/// Input indices ordered by ascending score, lowest index first on ties.
fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

fn selection_weights(n: usize, chosen: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; n];
    chosen.iter().for_each(|&i| w[i] = 1.0);
    w
}

fn krum_aggregate(gradients: &[Gradient], f: usize) -> Result<Aggregate> {
    let (scores, evals) = krum_scores(gradients, f)?;
    let best = rank_by_score(&scores)[0];
    let mut gradient = gradients[best].clone();
    gradient.payload_bytes = gradients.iter().map(|g| g.payload_bytes).max().unwrap_or(1);
    Ok(Aggregate {
        gradient,
        weights: selection_weights(gradients.len(), &[best]),
        fallback: false,
        distance_evals: evals,
    })
}

pub fn krum(gradients: &[Gradient], f: usize) -> Result<Gradient> {
    krum_aggregate(gradients, f).map(|a| a.gradient)
}

fn multi_krum_aggregate(gradients: &[Gradient], f: usize, m: usize) -> Result<Aggregate> {
    let n = gradients.len();
    if m == 0 || m > n {
        return Err(AggregationError::InvalidParameter(format!("multi-krum m = {m} with n = {n}")));
    }
    let (scores, evals) = krum_scores(gradients, f)?;
    let chosen: Vec<usize> = rank_by_score(&scores)[..m].to_vec();
    let picked: Vec<Gradient> = chosen.iter().map(|&i| gradients[i].clone()).collect();
    let mut gradient = mean(&picked)?;
    gradient.payload_bytes = gradients.iter().map(|g| g.payload_bytes).max().unwrap_or(1);
    Ok(Aggregate {
        gradient,
        weights: selection_weights(n, &chosen),
        fallback: false,
        distance_evals: evals,
    })
}

pub fn multi_krum(gradients: &[Gradient], f: usize, m: usize) -> Result<Gradient> {
    multi_krum_aggregate(gradients, f, m).map(|a| a.gradient)
}

/// Cosine distance in [0, 2]; zero-norm vectors get the maximal distance.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 2.0;
    }
    (1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0)
}

fn l_nearest_aggregate(gradients: &[Gradient], l: usize) -> Result<Aggregate> {
    let d = check_inputs(gradients)?;
    let n = gradients.len();
    if l == 0 || l > n {
        return Err(AggregationError::InvalidParameter(format!("l-nearest l = {l} with n = {n}")));
    }
    let mut sum = vec![0.0; d];
    for g in gradients {
        for (s, v) in sum.iter_mut().zip(&g.values) {
            *s += v;
        }
    }
    if dot(&sum, &sum) == 0.0 {
        return Ok(Aggregate {
            gradient: mean(gradients)?,
            weights: vec![1.0; n],
            fallback: true,
            distance_evals: 0,
        });
    }
    let dists: Vec<f64> = gradients.iter().map(|g| cosine_distance(&g.values, &sum)).collect();
    let chosen: Vec<usize> = rank_by_score(&dists)[..l].to_vec();
    let picked: Vec<Gradient> = chosen.iter().map(|&i| gradients[i].clone()).collect();
    let mut gradient = mean(&picked)?;
    gradient.payload_bytes = gradients.iter().map(|g| g.payload_bytes).max().unwrap_or(1);
    Ok(Aggregate {
        gradient,
        weights: selection_weights(n, &chosen),
        fallback: false,
        distance_evals: n,
    })
}

pub fn l_nearest(gradients: &[Gradient], l: usize) -> Result<Gradient> {
    l_nearest_aggregate(gradients, l).map(|a| a.gradient)
}

/// Scores how anomalous a gradient is relative to a reference population.
pub trait AnomalyDetector: Send + Sync {
    fn score(&self, g: &Gradient, peers: &[Gradient]) -> Result<f64>;

    /// Scores every member of `population` against the whole population.
    /// Returns the scores and the number of distance evaluations.
    fn score_all(&self, population: &[Gradient]) -> Result<(Vec<f64>, usize)> {
        let scores = population
            .iter()
            .map(|g| self.score(g, population))
            .collect::<Result<Vec<_>>>()?;
        let evals = population.len() * (population.len() + 1);
        Ok((scores, evals))
    }
}

pub const MAD_SCALE: f64 = 1.4826;
pub const MAD_EPSILON: f64 = 1e-12;

/// Robust z-score: distance to the coordinate-wise median over the scaled
/// median absolute distance of the peers.
#[derive(Clone, Copy, Debug, Default)]
pub struct MedianMadDetector;

impl MedianMadDetector {
    fn centre_and_scale(peers: &[Gradient]) -> Result<(Vec<f64>, f64)> {
        let centre = coordinate_median(peers)?.values;
        let mut dists: Vec<f64> = peers
            .iter()
            .map(|p| squared_distance(&p.values, &centre).sqrt())
            .collect();
        let mad = median_in_place(&mut dists);
        Ok((centre, MAD_SCALE * mad + MAD_EPSILON))
    }
}

impl AnomalyDetector for MedianMadDetector {
    fn score(&self, g: &Gradient, peers: &[Gradient]) -> Result<f64> {
        let d = check_inputs(peers)?;
        if g.dim() != d {
            return Err(AggregationError::DimensionMismatch {
                expected: d,
                found: g.dim(),
            });
        }
        let (centre, scale) = Self::centre_and_scale(peers)?;
        Ok(squared_distance(&g.values, &centre).sqrt() / scale)
    }

    fn score_all(&self, population: &[Gradient]) -> Result<(Vec<f64>, usize)> {
        let (centre, scale) = Self::centre_and_scale(population)?;
        let scores = population
            .iter()
            .map(|g| squared_distance(&g.values, &centre).sqrt() / scale)
            .collect();
        Ok((scores, population.len()))
    }
}

pub fn anomaly_score(g: &Gradient, peers: &[Gradient]) -> Result<f64> {
    MedianMadDetector.score(g, peers)
}

fn detection_weighted_with(
    detector: &dyn AnomalyDetector,
    gradients: &[Gradient],
    threshold: f64,
) -> Result<Aggregate> {
    check_inputs(gradients)?;
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(AggregationError::InvalidParameter(format!("threshold {threshold}")));
    }
    if gradients.len() == 1 {
        return Ok(Aggregate {
            gradient: output(gradients[0].values.clone(), gradients),
            weights: vec![1.0],
            fallback: false,
            distance_evals: 0,
        });
    }
    let (scores, evals) = detector.score_all(gradients)?;
    let weights: Vec<f64> = scores
        .iter()
        .map(|&s| if s > threshold { 0.0 } else { 1.0 / (1.0 + s) })
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(Aggregate {
            gradient: coordinate_median(gradients)?,
            weights,
            fallback: true,
            distance_evals: evals,
        });
    }
    Ok(Aggregate {
        gradient: weighted_mean(gradients, &weights)?,
        weights,
        fallback: false,
        distance_evals: evals,
    })
}

/// Weighted average where inputs scoring above `threshold` get weight 0 and
/// the rest `1 / (1 + score)`. Scores are taken against the full input set.
pub fn detection_weighted(gradients: &[Gradient], threshold: f64) -> Result<(Gradient, Vec<f64>)> {
    detection_weighted_with(&MedianMadDetector, gradients, threshold).map(|a| (a.gradient, a.weights))
}

/// Applies the operator described by `spec`, with the default detector.
pub fn aggregate(spec: &AggregatorSpec, gradients: &[Gradient]) -> Result<Aggregate> {
    aggregate_with(spec, &MedianMadDetector, gradients)
}

pub fn aggregate_with(
    spec: &AggregatorSpec,
    detector: &dyn AnomalyDetector,
    gradients: &[Gradient],
) -> Result<Aggregate> {
    spec.validate()?;
    let n = gradients.len();
    match spec.kind {
        AggregatorKind::Mean => Ok(Aggregate {
            gradient: mean(gradients)?,
            weights: vec![1.0; n],
            fallback: false,
            distance_evals: 0,
        }),
        AggregatorKind::Krum => krum_aggregate(gradients, spec.f),
        AggregatorKind::MultiKrum => {
            let m = spec.m.unwrap_or_else(|| n.saturating_sub(spec.f).max(1)).min(n.max(1));
            multi_krum_aggregate(gradients, spec.f, m)
        }
        AggregatorKind::LNearest => {
            let l = spec.l.unwrap_or_else(|| default_l(n)).min(n.max(1));
            l_nearest_aggregate(gradients, l)
        }
        AggregatorKind::DetectionWeighted => detection_weighted_with(detector, gradients, spec.detection_threshold),
    }
}

/// `ceil(0.7 n)`, at least 1.
pub fn default_l(n: usize) -> usize {
    ((7 * n).div_ceil(10)).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(v: &[f64]) -> Gradient {
        Gradient::from_values(v.to_vec())
    }

    fn four() -> Vec<Gradient> {
        vec![g(&[0.0, 0.0]), g(&[0.1, 0.0]), g(&[0.0, 0.1]), g(&[10.0, 10.0])]
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean(&[g(&[1.0, 2.0]), g(&[3.0, 4.0])]).unwrap().values, vec![2.0, 3.0]);
        let v = g(&[0.3, -1.7, 2.0]);
        assert!(close(&mean(&vec![v.clone(); 5]).unwrap().values, &v.values, 1e-15));
        assert!(close(&mean(&four()).unwrap().values, &[2.525, 2.525], 1e-12));
    }

    #[test]
    fn mean_errors() {
        assert_eq!(mean(&[]), Err(AggregationError::Empty));
        assert!(matches!(
            mean(&[g(&[1.0]), g(&[1.0, 2.0])]),
            Err(AggregationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn payload_is_max_of_inputs() {
        let mut a = g(&[1.0]);
        a.payload_bytes = 10;
        let mut b = g(&[2.0]);
        b.payload_bytes = 30;
        assert_eq!(mean(&[a, b]).unwrap().payload_bytes, 30);
    }

    #[test]
    fn krum_example() {
        let (scores, evals) = krum_scores(&four(), 1).unwrap();
        assert!(close(&scores, &[0.01, 0.01, 0.01, 198.01], 1e-9));
        assert_eq!(evals, 6);
        assert_eq!(krum(&four(), 1).unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn krum_identical_and_too_small() {
        let v = vec![g(&[1.5, 2.5]); 5];
        assert_eq!(krum(&v, 1).unwrap().values, vec![1.5, 2.5]);
        assert_eq!(krum_scores(&v, 1).unwrap().0, vec![0.0; 5]);
        let err = krum(&four()[..3], 1).unwrap_err();
        assert_eq!(err, AggregationError::TooFewForKrum { n: 3, f: 1 });
        assert!(err.to_string().contains("n - f - 2 >= 1"));
    }

    #[test]
    fn multi_krum_examples() {
        assert!(close(&multi_krum(&four(), 1, 2).unwrap().values, &[0.05, 0.0], 1e-12));
        assert_eq!(multi_krum(&four(), 1, 1).unwrap().values, krum(&four(), 1).unwrap().values);
        let v = vec![g(&[4.0, -4.0]); 4];
        assert!(close(&multi_krum(&v, 1, 4).unwrap().values, &[4.0, -4.0], 1e-12));
        assert!(multi_krum(&four(), 1, 0).is_err());
        assert!(multi_krum(&four(), 1, 5).is_err());
    }

    #[test]
    fn l_nearest_example() {
        let gs = vec![g(&[1.0, 0.0]), g(&[0.9, 0.1]), g(&[-1.0, 0.0])];
        let sum = [0.9, 0.1];
        assert!(cosine_distance(&gs[1].values, &sum) < 1e-12);
        assert!((cosine_distance(&gs[0].values, &sum) - 0.0061).abs() < 1e-4);
        assert!((cosine_distance(&gs[2].values, &sum) - 1.9939).abs() < 1e-4);
        assert!(close(&l_nearest(&gs, 2).unwrap().values, &[0.95, 0.05], 1e-12));
        assert!(close(&l_nearest(&gs, 3).unwrap().values, &mean(&gs).unwrap().values, 1e-12));
        let same = vec![g(&[2.0, 1.0]); 3];
        assert!(close(&l_nearest(&same, 2).unwrap().values, &[2.0, 1.0], 1e-12));
    }

    #[test]
    fn l_nearest_zero_sum_falls_back() {
        let gs = vec![g(&[1.0, 0.0]), g(&[-1.0, 0.0])];
        let a = aggregate(&AggregatorSpec::l_nearest(Some(1)), &gs).unwrap();
        assert!(a.fallback);
        assert_eq!(a.gradient.values, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_norm_input_has_max_distance() {
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 2.0);
    }

    #[test]
    fn anomaly_score_examples() {
        let peers = vec![g(&[1.0, 1.0]), g(&[1.1, 0.9]), g(&[0.9, 1.1])];
        assert_eq!(anomaly_score(&g(&[1.0, 1.0]), &peers).unwrap(), 0.0);
        let z = anomaly_score(&g(&[100.0, 100.0]), &peers).unwrap();
        // 99 * sqrt(2) / (1.4826 * 0.1 * sqrt(2))
        assert!((z - 99.0 / 0.14826).abs() < 1e-6);
        assert!(z > 3.0);
        let same = vec![g(&[3.0, 3.0]); 4];
        assert_eq!(anomaly_score(&g(&[3.0, 3.0]), &same).unwrap(), 0.0);
    }

    #[test]
    fn detection_weighted_filters_outlier() {
        let gs = vec![g(&[1.0, 1.0]), g(&[1.1, 0.9]), g(&[0.9, 1.1]), g(&[100.0, 100.0])];
        let (out, w) = detection_weighted(&gs, 3.0).unwrap();
        assert_eq!(w[3], 0.0);
        assert!(w[..3].iter().all(|&x| x > 0.0));
        assert!(close(&out.values, &[1.0, 1.0], 0.1));
    }

    #[test]
    fn detection_weighted_identical_and_pair() {
        let same = vec![g(&[0.5, 0.25]); 3];
        let (out, w) = detection_weighted(&same, 3.0).unwrap();
        assert_eq!(out.values, vec![0.5, 0.25]);
        assert_eq!(w, vec![1.0; 3]);
        let pair = vec![g(&[1.0, -1.0]), g(&[-1.0, 1.0])];
        let (out, w) = detection_weighted(&pair, 3.0).unwrap();
        assert!(close(&out.values, &[0.0, 0.0], 1e-15));
        assert_eq!(w[0], w[1]);
        assert!(w[0] > 0.0);
    }

    #[test]
    fn complexity_witnesses() {
        let gs: Vec<Gradient> = (0..9).map(|i| g(&[i as f64, (i * i) as f64])).collect();
        let k = aggregate(&AggregatorSpec::krum(2), &gs).unwrap();
        assert_eq!(k.distance_evals, 9 * 8 / 2);
        let l = aggregate(&AggregatorSpec::l_nearest(Some(3)), &gs).unwrap();
        assert_eq!(l.distance_evals, 9);
        let d = aggregate(&AggregatorSpec::detection_weighted(3.0), &gs).unwrap();
        assert_eq!(d.distance_evals, 9);
    }

    #[test]
    fn invalid_threshold_rejected() {
        let gs = vec![g(&[1.0]), g(&[2.0])];
        assert!(aggregate(&AggregatorSpec::detection_weighted(0.0), &gs).is_err());
    }
}

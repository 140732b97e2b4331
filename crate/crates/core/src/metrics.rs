//! Policy deviation, learner-centeredness, leave-one-out influence,
//! relevance/influence quadrants, and Spearman rank correlation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::LearningContext;
use crate::gateway::Backend;
use crate::policy::{Policy, PolicyEngine, PolicyError, PolicyEstimate, PolicyState};
use crate::seed::SeedStream;

pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 3.0;
pub const DEFAULT_PERMUTATIONS: usize = 100_000;
/// Relative reduction counted as a meaningful improvement.
pub const REDUCTION_BUCKET: f64 = 0.10;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("strategy `{0}` has no orientation score")]
    MissingOrientation(String),
    #[error("spearman needs two equal-length series of at least 3 values (got {0} and {1})")]
    SpearmanInput(usize, usize),
    #[error("threshold must be finite")]
    Threshold,
}

/// Total variation distance, `1/2 * sum |p(a) - q(a)|`.
pub fn tvd(p: &Policy, q: &Policy) -> Result<f64, MetricError> {
    p.check()?;
    q.check()?;
    let mut keys: Vec<&str> = p.as_map().keys().chain(q.as_map().keys()).map(String::as_str).collect();
    keys.sort_unstable();
    keys.dedup();
    let sum: f64 = keys.iter().map(|k| (p.get(k) - q.get(k)).abs()).sum();
    Ok((0.5 * sum).min(1.0))
}

/// Expected orientation score under the policy.
pub fn learner_centeredness(policy: &Policy, orientation: &BTreeMap<String, f64>) -> Result<f64, MetricError> {
    policy
        .support()
        .map(|a| {
            orientation
                .get(a)
                .map(|f| policy.get(a) * f)
                .ok_or_else(|| MetricError::MissingOrientation(a.to_string()))
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub dev_control: f64,
    pub dev_intervention: f64,
    pub absolute_reduction: f64,
    /// `None` when the control deviation is 0.
    pub relative_reduction: Option<f64>,
}

impl DeviationReport {
    pub fn below_diagonal(&self) -> bool {
        self.dev_intervention < self.dev_control
    }

    pub fn meets_reduction_bucket(&self) -> bool {
        self.relative_reduction.is_some_and(|r| r >= REDUCTION_BUCKET - 1e-12)
    }
}

pub fn deviation_report(control: &Policy, intervention: &Policy, expert: &Policy) -> Result<DeviationReport, MetricError> {
    let dev_control = tvd(control, expert)?;
    let dev_intervention = tvd(intervention, expert)?;
    Ok(DeviationReport::from_deviations(dev_control, dev_intervention))
}

impl DeviationReport {
    pub fn from_deviations(dev_control: f64, dev_intervention: f64) -> Self {
        let absolute_reduction = dev_control - dev_intervention;
        Self {
            dev_control,
            dev_intervention,
            absolute_reduction,
            relative_reduction: (dev_control != 0.0).then(|| absolute_reduction / dev_control),
        }
    }
}

/// Result of one leave-one-out comparison.
#[derive(Debug, Clone)]
pub struct InfluenceMeasurement {
    pub influence: f64,
    pub degraded: bool,
    pub baseline: PolicyEstimate,
    pub ablated: PolicyEstimate,
}

/// TVD between the policy for `context` and the policy with characteristic
/// `index` omitted, both estimated fresh with the same `(n, k, seed)`.
pub fn influence(
    engine: &PolicyEngine,
    backend: &dyn Backend,
    context: &LearningContext,
    index: usize,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<InfluenceMeasurement, crate::Error> {
    let ablated_ctx = context.omit_characteristic(index)?;
    let baseline = engine.estimate(backend, &PolicyState::Context(context), n, k, seed)?;
    let ablated = engine.estimate(backend, &PolicyState::Context(&ablated_ctx), n, k, seed)?;
    Ok(influence_from(baseline, ablated)?)
}

/// Influence from two existing estimates.
pub fn influence_from(baseline: PolicyEstimate, ablated: PolicyEstimate) -> Result<InfluenceMeasurement, MetricError> {
    let influence = tvd(&baseline.policy(), &ablated.policy())?;
    Ok(InfluenceMeasurement { influence, degraded: baseline.degraded || ablated.degraded, baseline, ablated })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    /// High relevance, high influence.
    Aligned,
    /// High relevance, low influence.
    Neglected,
    /// Low relevance, high influence.
    Hallucinated,
    /// Low relevance, low influence.
    Irrelevant,
}

impl Quadrant {
    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::Aligned => "aligned",
            Quadrant::Neglected => "neglected",
            Quadrant::Hallucinated => "hallucinated",
            Quadrant::Irrelevant => "irrelevant",
        }
    }
}

/// Relevance at the threshold counts as high; influence at the threshold
/// counts as low.
pub fn quadrant_classify(
    relevance: f64,
    influence: f64,
    influence_threshold: f64,
    relevance_threshold: f64,
) -> Result<Quadrant, MetricError> {
    if !(influence_threshold.is_finite() && relevance_threshold.is_finite()) {
        return Err(MetricError::Threshold);
    }
    let high_rel = relevance >= relevance_threshold;
    let high_inf = influence > influence_threshold;
    Ok(match (high_rel, high_inf) {
        (true, true) => Quadrant::Aligned,
        (true, false) => Quadrant::Neglected,
        (false, true) => Quadrant::Hallucinated,
        (false, false) => Quadrant::Irrelevant,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub characteristic: String,
    pub text: String,
    pub is_null: bool,
    pub influence: f64,
    pub relevance: f64,
    pub quadrant: Quadrant,
    pub degraded: bool,
    pub baseline_estimate: String,
    pub ablated_estimate: String,
}

/// Average ranks, 1-based, ties sharing the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    /// `None` when either series is constant.
    pub rho: Option<f64>,
    /// Two-sided Monte-Carlo permutation p-value, `(1 + hits) / (1 + draws)`.
    pub p_value: Option<f64>,
    pub permutations: usize,
}

/// Spearman's rho over average ranks with a seeded permutation test that
/// shuffles `ys`.
pub fn spearman(xs: &[f64], ys: &[f64], permutations: usize, seed: u64) -> Result<SpearmanResult, MetricError> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(MetricError::SpearmanInput(xs.len(), ys.len()));
    }
    let rx = average_ranks(xs);
    let mut ry = average_ranks(ys);
    let Some(rho) = pearson(&rx, &ry) else {
        return Ok(SpearmanResult { rho: None, p_value: None, permutations });
    };
    if permutations == 0 {
        return Ok(SpearmanResult { rho: Some(rho), p_value: None, permutations });
    }
    let mut rng = SeedStream::new(seed).child("spearman").rng();
    let threshold = rho.abs() - 1e-12;
    let mut hits = 0usize;
    for _ in 0..permutations {
        ry.shuffle(&mut rng);
        if pearson(&rx, &ry).expect("ranks are non-constant").abs() >= threshold {
            hits += 1;
        }
    }
    Ok(SpearmanResult {
        rho: Some(rho),
        p_value: Some((1 + hits) as f64 / (1 + permutations) as f64),
        permutations,
    })
}

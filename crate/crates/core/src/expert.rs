//! Expert annotations and the reference signals derived from them.
//!
//! * Task 1 labels each strategy learner-centered (+1), content-centered (-1)
//!   or balanced (0); the per-strategy mean is the orientation score.
//! * Task 2 picks five strategies per characteristic; each rater's pick is an
//!   indicator policy with mass 1/5 per strategy, and raters are averaged.
//! * Task 3 rates each characteristic's relevance on 1..=5; raters are
//!   averaged.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{ActionSpace, Policy, PolicyError};

pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;
pub const TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("annotation file does not match schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("no task 2 selections for characteristic(s): {}", .0.join(", "))]
    MissingCharacteristics(Vec<String>),
    #[error("no task 3 ratings for characteristic(s): {}", .0.join(", "))]
    MissingRelevance(Vec<String>),
    #[error("reliability: {0}")]
    Alpha(#[from] AlphaError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("reading annotations: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ExpertError {
    ExpertError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    LearnerCentered,
    ContentCentered,
    Balanced,
}

impl Orientation {
    pub fn code(self) -> f64 {
        match self {
            Orientation::LearnerCentered => 1.0,
            Orientation::ContentCentered => -1.0,
            Orientation::Balanced => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationLabel {
    pub label: Orientation,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySelection {
    pub strategies: Vec<String>,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRating {
    pub rating: i64,
    #[serde(default)]
    pub justification: String,
}

type PerRater<T> = BTreeMap<String, BTreeMap<String, T>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertAnnotations {
    pub schema_version: u32,
    pub raters: Vec<String>,
    /// rater -> strategy -> label
    pub task1: PerRater<OrientationLabel>,
    /// rater -> characteristic -> top-5 strategies
    pub task2: PerRater<StrategySelection>,
    /// rater -> characteristic -> 1..=5 rating
    pub task3: PerRater<RelevanceRating>,
}

impl ExpertAnnotations {
    /// Parses and validates an annotation document. `characteristics`, when
    /// given, is the set of characteristic keys task 2 and task 3 may use.
    pub fn from_json(
        text: &str,
        actions: &ActionSpace,
        characteristics: Option<&BTreeSet<String>>,
    ) -> Result<Self, ExpertError> {
        let a: ExpertAnnotations = serde_json::from_str(text)?;
        a.validate(actions, characteristics)?;
        Ok(a)
    }

    pub fn from_path(
        path: &Path,
        actions: &ActionSpace,
        characteristics: Option<&BTreeSet<String>>,
    ) -> Result<Self, ExpertError> {
        Self::from_json(&std::fs::read_to_string(path)?, actions, characteristics)
    }

    pub fn validate(&self, actions: &ActionSpace, characteristics: Option<&BTreeSet<String>>) -> Result<(), ExpertError> {
        if self.schema_version != ANNOTATION_SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("unsupported version {}", self.schema_version)));
        }
        let raters: BTreeSet<&str> = self.raters.iter().map(String::as_str).collect();
        if raters.len() != self.raters.len() || raters.is_empty() {
            return Err(invalid("raters", "rater ids must be non-empty and distinct"));
        }
        for (task, keys) in [
            ("task1", self.task1.keys().collect::<Vec<_>>()),
            ("task2", self.task2.keys().collect()),
            ("task3", self.task3.keys().collect()),
        ] {
            if let Some(r) = keys.iter().find(|r| !raters.contains(r.as_str())) {
                return Err(invalid(format!("{task}.{r}"), "unknown rater"));
            }
        }
        let check_char = |path: String, c: &str| -> Result<(), ExpertError> {
            match characteristics {
                Some(known) if !known.contains(c) => Err(invalid(path, format!("unknown characteristic `{c}`"))),
                _ => Ok(()),
            }
        };

        for (rater, labels) in &self.task1 {
            for s in labels.keys() {
                if !actions.contains(s) {
                    return Err(invalid(format!("task1.{rater}.{s}"), "unknown strategy"));
                }
            }
        }
        for s in actions.names() {
            if !self.task1.values().any(|labels| labels.contains_key(s)) {
                return Err(invalid("task1".to_string(), format!("no rater labeled strategy `{s}`")));
            }
        }

        for (rater, sel) in &self.task2 {
            for (c, entry) in sel {
                let path = format!("task2.{rater}.{c}.strategies");
                check_char(format!("task2.{rater}.{c}"), c)?;
                let distinct: BTreeSet<&str> = entry.strategies.iter().map(String::as_str).collect();
                if entry.strategies.len() != TOP_K || distinct.len() != TOP_K {
                    return Err(invalid(
                        path,
                        format!("expected {TOP_K} distinct strategies, found {} ({} distinct)", entry.strategies.len(), distinct.len()),
                    ));
                }
                if let Some(s) = entry.strategies.iter().find(|s| !actions.contains(s)) {
                    return Err(invalid(path, format!("unknown strategy `{s}`")));
                }
            }
        }

        for (rater, ratings) in &self.task3 {
            for (c, r) in ratings {
                check_char(format!("task3.{rater}.{c}"), c)?;
                if !(1..=5).contains(&r.rating) {
                    return Err(invalid(format!("task3.{rater}.{c}.rating"), format!("rating {} outside 1..=5", r.rating)));
                }
            }
        }
        Ok(())
    }

    fn task2_characteristics(&self) -> BTreeSet<&str> {
        self.task2.values().flat_map(|m| m.keys().map(String::as_str)).collect()
    }
}

/// Orientation scores per strategy plus the nominal reliability of the labels.
pub fn orientation_scores(a: &ExpertAnnotations) -> Result<(BTreeMap<String, f64>, f64), ExpertError> {
    let strategies: BTreeSet<&str> = a.task1.values().flat_map(|m| m.keys().map(String::as_str)).collect();
    let mut scores = BTreeMap::new();
    for s in &strategies {
        let codes: Vec<f64> = a.task1.values().filter_map(|m| m.get(*s)).map(|l| l.label.code()).collect();
        scores.insert(s.to_string(), codes.iter().sum::<f64>() / codes.len() as f64);
    }
    let matrix: Vec<Vec<Option<f64>>> = a
        .raters
        .iter()
        .map(|r| strategies.iter().map(|s| a.task1.get(r).and_then(|m| m.get(*s)).map(|l| l.label.code())).collect())
        .collect();
    let alpha = krippendorff_alpha(&matrix, DistanceMetric::Nominal)?;
    Ok((scores, alpha))
}

/// Rater-averaged indicator policy for one characteristic.
pub fn characteristic_policy(a: &ExpertAnnotations, characteristic: &str) -> Option<Policy> {
    let picks: Vec<&StrategySelection> = a.task2.values().filter_map(|m| m.get(characteristic)).collect();
    if picks.is_empty() {
        return None;
    }
    let mut acc: BTreeMap<String, f64> = BTreeMap::new();
    for sel in &picks {
        for s in &sel.strategies {
            *acc.entry(s.clone()).or_insert(0.0) += 1.0 / TOP_K as f64;
        }
    }
    let n = picks.len() as f64;
    Some(Policy::from_weights(acc.into_iter().map(|(k, v)| (k, v / n)).collect()).expect("non-empty indicator mass"))
}

/// Reference policy for a context: uniform mixture of its characteristics'
/// expert policies.
pub fn aggregate_expert_policy(a: &ExpertAnnotations, characteristics: &[&str]) -> Result<Policy, ExpertError> {
    let mut parts = Vec::with_capacity(characteristics.len());
    let mut missing = Vec::new();
    for c in characteristics {
        match characteristic_policy(a, c) {
            Some(p) => parts.push(p),
            None => missing.push(c.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(ExpertError::MissingCharacteristics(missing));
    }
    Ok(Policy::mixture(&parts)?)
}

/// Mean pairwise overlap of raters' top-5 picks, averaged over characteristics
/// with at least two raters. `None` when there is no such characteristic.
pub fn task2_mean_overlap(a: &ExpertAnnotations) -> Option<f64> {
    let mut per_char = Vec::new();
    for c in a.task2_characteristics() {
        let sets: Vec<BTreeSet<&str>> = a
            .task2
            .values()
            .filter_map(|m| m.get(c))
            .map(|s| s.strategies.iter().map(String::as_str).collect())
            .collect();
        let mut overlaps = Vec::new();
        for i in 0..sets.len() {
            for j in (i + 1)..sets.len() {
                overlaps.push(sets[i].intersection(&sets[j]).count() as f64);
            }
        }
        if !overlaps.is_empty() {
            per_char.push(overlaps.iter().sum::<f64>() / overlaps.len() as f64);
        }
    }
    (!per_char.is_empty()).then(|| per_char.iter().sum::<f64>() / per_char.len() as f64)
}

/// Mean task-3 rating per characteristic.
pub fn relevance_scores(a: &ExpertAnnotations) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ratings in a.task3.values() {
        for (c, r) in ratings {
            let e = acc.entry(c.clone()).or_insert((0.0, 0));
            e.0 += r.rating as f64;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}

fn task3_alpha(a: &ExpertAnnotations) -> Result<f64, AlphaError> {
    let chars: BTreeSet<&str> = a.task3.values().flat_map(|m| m.keys().map(String::as_str)).collect();
    let matrix: Vec<Vec<Option<f64>>> = a
        .raters
        .iter()
        .map(|r| chars.iter().map(|c| a.task3.get(r).and_then(|m| m.get(*c)).map(|x| x.rating as f64)).collect())
        .collect();
    krippendorff_alpha(&matrix, DistanceMetric::Ordinal)
}

/// Everything derived from the annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertReference {
    pub orientation_score: BTreeMap<String, f64>,
    pub task1_alpha: f64,
    pub per_characteristic_policy: BTreeMap<String, Policy>,
    pub relevance: BTreeMap<String, f64>,
    /// `None` when fewer than two characteristics carry paired ratings.
    pub task3_alpha: Option<f64>,
    pub task2_mean_overlap: Option<f64>,
}

impl ExpertReference {
    pub fn build(a: &ExpertAnnotations) -> Result<Self, ExpertError> {
        let (orientation_score, task1_alpha) = orientation_scores(a)?;
        let per_characteristic_policy = a
            .task2_characteristics()
            .into_iter()
            .map(|c| (c.to_string(), characteristic_policy(a, c).expect("characteristic has picks")))
            .collect();
        let task3_alpha = task3_alpha(a).ok();
        Ok(Self {
            orientation_score,
            task1_alpha,
            per_characteristic_policy,
            relevance: relevance_scores(a),
            task3_alpha,
            task2_mean_overlap: task2_mean_overlap(a),
        })
    }

    /// Uniform mixture of per-characteristic policies.
    pub fn context_policy(&self, characteristics: &[&str]) -> Result<Policy, ExpertError> {
        let missing: Vec<String> = characteristics
            .iter()
            .filter(|c| !self.per_characteristic_policy.contains_key(**c))
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(ExpertError::MissingCharacteristics(missing));
        }
        let parts: Vec<Policy> = characteristics.iter().map(|c| self.per_characteristic_policy[*c].clone()).collect();
        Ok(Policy::mixture(&parts)?)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AlphaError {
    #[error("need at least two units with two or more ratings")]
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Nominal,
    Ordinal,
}

/// Krippendorff's alpha over a rater x unit matrix (`None` = missing), via
/// the coincidence matrix: `alpha = 1 - (n - 1) * sum(o_ck d_ck) / sum(n_c n_k d_ck)`.
///
/// When every pairable value is identical there is no expected disagreement
/// and alpha is taken as 1.
pub fn krippendorff_alpha(ratings: &[Vec<Option<f64>>], metric: DistanceMetric) -> Result<f64, AlphaError> {
    let units = ratings.iter().map(Vec::len).max().unwrap_or(0);
    let columns: Vec<Vec<f64>> = (0..units)
        .map(|u| ratings.iter().filter_map(|row| row.get(u).copied().flatten()).collect::<Vec<f64>>())
        .filter(|vals| vals.len() >= 2)
        .collect();
    if columns.len() < 2 {
        return Err(AlphaError::InsufficientData);
    }

    let mut values: Vec<f64> = columns.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let idx = |v: f64| values.binary_search_by(|x| x.total_cmp(&v)).expect("value present");
    let c = values.len();

    let mut coincidence = vec![vec![0.0; c]; c];
    for vals in &columns {
        let m = vals.len() as f64;
        for (i, a) in vals.iter().enumerate() {
            for (j, b) in vals.iter().enumerate() {
                if i != j {
                    coincidence[idx(*a)][idx(*b)] += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();

    let delta = |a: usize, b: usize| -> f64 {
        match metric {
            DistanceMetric::Nominal => f64::from(u8::from(a != b)),
            DistanceMetric::Ordinal => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let s: f64 = marginals[lo..=hi].iter().sum::<f64>() - (marginals[lo] + marginals[hi]) / 2.0;
                s * s
            }
        }
    };

    let mut observed = 0.0;
    let mut expected = 0.0;
    for a in 0..c {
        for b in 0..c {
            let d = delta(a, b);
            observed += coincidence[a][b] * d;
            expected += marginals[a] * marginals[b] * d;
        }
    }
    if expected == 0.0 {
        info!("no expected disagreement among {} values; alpha taken as 1", n);
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

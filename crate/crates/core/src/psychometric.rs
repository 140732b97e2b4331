//! Psychometric learner generation.
//!
//! Latent construct scores are drawn as `z ~ N(mu, diag(sd) R diag(sd))` and
//! item responses as `x_j = loading_j * z_c(j) + noise_j`, where the noise
//! has variance `sd_c(j)^2 (1 - loading_j^2)`. Raw responses are kept and a
//! copy clamped to the Likert bounds is stored alongside.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::SeedStream;

pub const SCHEMA_VERSION: u32 = 1;

/// Eigenvalues of the covariance below this are lifted by the repair step.
pub const EIGEN_FLOOR: f64 = 1e-10;
/// Eigenvalues below this reject the matrix outright.
pub const REPAIR_LIMIT: f64 = -1e-8;

const SYMMETRY_TOL: f64 = 1e-12;

static MSLQ_STATISTICS: &str = include_str!("../assets/mslq_statistics.json");

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("statistics document does not match schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("correlation is not symmetric: correlation[{i}][{j}] = {upper} but correlation[{j}][{i}] = {lower}")]
    Asymmetric { i: usize, j: usize, upper: f64, lower: f64 },
    #[error("covariance is not positive semi-definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemiDefinite { min_eigenvalue: f64 },
    #[error("covariance factorization failed after repair")]
    Factorization,
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("construct vector has {found} entries, model has {expected} constructs")]
    Dimension { expected: usize, found: usize },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Invalid { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructSpec {
    pub id: String,
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: String,
    pub construct: String,
    pub loading: f64,
    pub statement: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct LikertBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for LikertBounds {
    fn default() -> Self {
        Self { min: 1.0, max: 7.0 }
    }
}

impl From<[f64; 2]> for LikertBounds {
    fn from([min, max]: [f64; 2]) -> Self {
        Self { min, max }
    }
}

impl From<LikertBounds> for [f64; 2] {
    fn from(b: LikertBounds) -> Self {
        [b.min, b.max]
    }
}

impl LikertBounds {
    pub fn clamp(&self, raw: f64) -> f64 {
        raw.clamp(self.min, self.max)
    }
}

/// The on-disk statistics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsDocument {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub constructs: Vec<ConstructSpec>,
    pub correlation: Vec<Vec<f64>>,
    pub items: Vec<ItemSpec>,
    #[serde(default)]
    pub likert_bounds: LikertBounds,
}

/// Record of a jitter repair applied to a nearly-PSD covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdRepair {
    pub min_eigenvalue: f64,
    pub floor: f64,
}

/// A validated statistics document with its covariance factor.
#[derive(Debug, Clone)]
pub struct PsychometricModel {
    doc: StatisticsDocument,
    cov_factor: DMatrix<f64>,
    construct_index: HashMap<String, usize>,
    item_construct: Vec<usize>,
    repair: Option<PsdRepair>,
}

impl PsychometricModel {
    /// The bundled 15-construct MSLQ statistics.
    pub fn mslq() -> Self {
        Self::from_json(MSLQ_STATISTICS).expect("bundled statistics are valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn from_document(doc: StatisticsDocument) -> Result<Self, ModelError> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", doc.schema_version),
            ));
        }
        let m = doc.constructs.len();
        if m == 0 {
            return Err(invalid("constructs", "at least one construct is required"));
        }
        let mut construct_index = HashMap::with_capacity(m);
        for (i, c) in doc.constructs.iter().enumerate() {
            if c.id.is_empty() {
                return Err(invalid(format!("constructs[{i}].id"), "empty identifier"));
            }
            if construct_index.insert(c.id.clone(), i).is_some() {
                return Err(invalid(format!("constructs[{i}].id"), format!("duplicate construct `{}`", c.id)));
            }
            if !c.mean.is_finite() {
                return Err(invalid(format!("constructs[{i}].mean"), "mean must be finite"));
            }
            if !(c.sd.is_finite() && c.sd > 0.0) {
                return Err(invalid(format!("constructs[{i}].sd"), format!("sd must be > 0, got {}", c.sd)));
            }
        }

        if doc.correlation.len() != m {
            return Err(invalid(
                "correlation",
                format!("expected {m} rows, found {}", doc.correlation.len()),
            ));
        }
        for (i, row) in doc.correlation.iter().enumerate() {
            if row.len() != m {
                return Err(invalid(format!("correlation[{i}]"), format!("expected {m} columns, found {}", row.len())));
            }
            for (j, &r) in row.iter().enumerate() {
                if !(r.is_finite() && (-1.0..=1.0).contains(&r)) {
                    return Err(invalid(format!("correlation[{i}][{j}]"), format!("entry {r} outside [-1, 1]")));
                }
            }
            if (row[i] - 1.0).abs() > SYMMETRY_TOL {
                return Err(invalid(format!("correlation[{i}][{i}]"), format!("diagonal must be 1, got {}", row[i])));
            }
        }
        for i in 0..m {
            for j in (i + 1)..m {
                let (upper, lower) = (doc.correlation[i][j], doc.correlation[j][i]);
                if (upper - lower).abs() > SYMMETRY_TOL {
                    return Err(ModelError::Asymmetric { i, j, upper, lower });
                }
            }
        }

        let b = doc.likert_bounds;
        if !(b.min.is_finite() && b.max.is_finite() && b.min < b.max) {
            return Err(invalid("likert_bounds", format!("min must be below max, got [{}, {}]", b.min, b.max)));
        }

        let mut item_construct = Vec::with_capacity(doc.items.len());
        let mut item_ids = HashMap::new();
        let mut covered = vec![false; m];
        for (j, item) in doc.items.iter().enumerate() {
            if item_ids.insert(item.id.as_str(), j).is_some() {
                return Err(invalid(format!("items[{j}].id"), format!("duplicate item `{}`", item.id)));
            }
            let Some(&c) = construct_index.get(&item.construct) else {
                return Err(invalid(
                    format!("items[{j}].construct"),
                    format!("unknown construct `{}`", item.construct),
                ));
            };
            if !(item.loading > 0.0 && item.loading <= 1.0) {
                return Err(invalid(format!("items[{j}].loading"), format!("loading must be in (0, 1], got {}", item.loading)));
            }
            if item.statement.trim().is_empty() {
                return Err(invalid(format!("items[{j}].statement"), "empty statement"));
            }
            covered[c] = true;
            item_construct.push(c);
        }
        if let Some(c) = covered.iter().position(|&x| !x) {
            return Err(invalid(format!("constructs[{c}]"), format!("construct `{}` has no items", doc.constructs[c].id)));
        }

        let (cov_factor, repair) = factor_covariance(&doc)?;
        Ok(Self { doc, cov_factor, construct_index, item_construct, repair })
    }

    pub fn document(&self) -> &StatisticsDocument {
        &self.doc
    }

    pub fn constructs(&self) -> &[ConstructSpec] {
        &self.doc.constructs
    }

    pub fn items(&self) -> &[ItemSpec] {
        &self.doc.items
    }

    pub fn likert_bounds(&self) -> LikertBounds {
        self.doc.likert_bounds
    }

    pub fn construct(&self, id: &str) -> Option<&ConstructSpec> {
        self.construct_index.get(id).map(|&i| &self.doc.constructs[i])
    }

    pub fn construct_position(&self, id: &str) -> Option<usize> {
        self.construct_index.get(id).copied()
    }

    pub fn item(&self, id: &str) -> Option<&ItemSpec> {
        self.doc.items.iter().find(|i| i.id == id)
    }

    /// The jitter repair applied at load time, if any.
    pub fn repair(&self) -> Option<PsdRepair> {
        self.repair
    }

    /// Covariance `diag(sd) R diag(sd)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        covariance(&self.doc)
    }

    /// Draws `n` construct-score vectors. Vector `i` uses its own counter-based
    /// stream, so it does not depend on `n`.
    pub fn sample_constructs(&self, seed: u64, n: usize) -> Result<Vec<Vec<f64>>, ModelError> {
        if n == 0 {
            return Err(ModelError::EmptySample);
        }
        let root = SeedStream::new(seed).child("constructs");
        Ok((0..n as u64).map(|i| self.sample_construct_vector(&root.index(i))).collect())
    }

    fn sample_construct_vector(&self, stream: &SeedStream) -> Vec<f64> {
        let mut rng = stream.rng();
        let m = self.doc.constructs.len();
        let g = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let z = &self.cov_factor * g;
        self.doc.constructs.iter().zip(z.iter()).map(|(c, dz)| c.mean + dz).collect()
    }

    /// Draws item responses conditional on construct scores `z`.
    pub fn sample_items(&self, z: &[f64], seed: u64) -> Result<Vec<ItemResponse>, ModelError> {
        let m = self.doc.constructs.len();
        if z.len() != m {
            return Err(ModelError::Dimension { expected: m, found: z.len() });
        }
        let mut rng = SeedStream::new(seed).child("items").rng();
        let bounds = self.doc.likert_bounds;
        Ok(self
            .doc
            .items
            .iter()
            .zip(&self.item_construct)
            .map(|(item, &c)| {
                let g: f64 = rng.sample(StandardNormal);
                let noise_sd = self.doc.constructs[c].sd * (1.0 - item.loading * item.loading).max(0.0).sqrt();
                let raw = item.loading * z[c] + noise_sd * g;
                ItemResponse { item_id: item.id.clone(), raw, clamped: bounds.clamp(raw) }
            })
            .collect())
    }

    /// Generates learner `index` of the population seeded by `seed`.
    ///
    /// Construct scores agree with `sample_constructs(seed, n)[index]` for any
    /// `n > index`.
    pub fn generate_profile(&self, seed: u64, index: u64) -> LearnerProfile {
        let z = self.sample_construct_vector(&SeedStream::new(seed).child("constructs").index(index));
        let item_seed = SeedStream::new(seed).child("items").index(index).as_u64();
        let responses = self.sample_items(&z, item_seed).expect("dimension matches by construction");
        LearnerProfile {
            profile_id: format!("learner-{index:04}"),
            construct_scores: self.doc.constructs.iter().map(|c| c.id.clone()).zip(z).collect(),
            item_responses: responses
                .into_iter()
                .map(|r| (r.item_id, ResponseValue { raw: r.raw, clamped: r.clamped }))
                .collect(),
            seed,
            index,
        }
    }
}

fn covariance(doc: &StatisticsDocument) -> DMatrix<f64> {
    let m = doc.constructs.len();
    DMatrix::from_fn(m, m, |i, j| doc.constructs[i].sd * doc.correlation[i][j] * doc.constructs[j].sd)
}

fn factor_covariance(doc: &StatisticsDocument) -> Result<(DMatrix<f64>, Option<PsdRepair>), ModelError> {
    let cov = covariance(doc);
    let eig = SymmetricEigen::new(cov.clone());
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eigenvalue < REPAIR_LIMIT {
        return Err(ModelError::NotPositiveSemiDefinite { min_eigenvalue });
    }
    let (cov, repair) = if min_eigenvalue < EIGEN_FLOOR {
        warn!("covariance minimum eigenvalue {min_eigenvalue:e}; lifting eigenvalues to {EIGEN_FLOOR:e}");
        let lifted = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&lifted) * eig.eigenvectors.transpose();
        // re-symmetrize against round-off in the reconstruction
        let sym = (&rebuilt + rebuilt.transpose()) * 0.5;
        (sym, Some(PsdRepair { min_eigenvalue, floor: EIGEN_FLOOR }))
    } else {
        (cov, None)
    };
    let chol = cov.cholesky().ok_or(ModelError::Factorization)?;
    Ok((chol.l(), repair))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseValue {
    pub raw: f64,
    pub clamped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemResponse {
    pub item_id: String,
    pub raw: f64,
    pub clamped: f64,
}

/// One synthetic learner: latent construct scores plus item responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub profile_id: String,
    pub construct_scores: BTreeMap<String, f64>,
    pub item_responses: BTreeMap<String, ResponseValue>,
    /// Population seed.
    pub seed: u64,
    /// Counter within the population stream.
    pub index: u64,
}

//! Experiment orchestration: configuration, the run directory, and the
//! `generate`, `estimate`, `compare`, `ablate` and `report` commands.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/<run-id>/
//!   config.json        resolved configuration
//!   learners/          context archives (JSON Lines)
//!   estimates/         one JSON file per policy estimate
//!   reports/           figure CSVs and summary JSON
//!   cache/             default replay cache
//! ```
//!
//! The run id defaults to `<UTC timestamp>-<config hash>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::context::{
    assemble_context, read_archive_file, write_archive, ArchiveRecord, AssembleOptions,
    NullCharacteristic, Renderer,
};
use crate::error::{io_err, Error, Result};
use crate::expert::{ExpertAnnotations, ExpertReference};
use crate::gateway::{Backend, HttpBackend, HttpConfig, ReplayBackend, ScriptedBackend};
use crate::metrics::{
    deviation_report, influence_from, learner_centeredness, median, quadrant_classify, spearman, DeviationReport,
    InfluenceRecord, SpearmanResult, DEFAULT_PERMUTATIONS, DEFAULT_RELEVANCE_THRESHOLD,
};
use crate::policy::{ActionSpace, PolicyEngine, PolicyEstimate, PolicyState, DEFAULT_RETRY_BUDGET};
use crate::psychometric::PsychometricModel;
use crate::seed::SeedStream;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_OBJECTIVE: &str =
    "The learner wants to practice using the Fundamental Theorem of Calculus to evaluate definite integrals.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
    Replay,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http" => Ok(Self::Http),
            "scripted" => Ok(Self::Scripted),
            "replay" => Ok(Self::Replay),
            other => Err(Error::Usage(format!("unknown backend `{other}` (expected http, scripted or replay)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Scripted law file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpConfig>,
    /// Replay cache directory; defaults to `<run dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    /// With `kind = replay`, forward misses to this backend and record them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<BackendKind>,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self { kind: BackendKind::Scripted, law: None, http: None, cache: None, record: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub relevance: f64,
    /// Influence cut-off; the median observed influence when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub influence: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { relevance: DEFAULT_RELEVANCE_THRESHOLD, influence: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Index of the sampled learner whose full profile is ablated.
    pub learner: u64,
    /// Mix the null-characteristic catalog into the ablation context.
    pub nulls: bool,
    /// Estimate the full-context policy once and reuse it for every
    /// ablation instead of pairing a fresh baseline with each one.
    pub shared_baseline: bool,
    pub permutations: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { learner: 0, nulls: true, shared_baseline: false, permutations: DEFAULT_PERMUTATIONS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Scale statistics; the bundled MSLQ document when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistics: Option<PathBuf>,
    /// Strategy catalog; the bundled catalog when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    /// Context archive to reuse instead of generating learners.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contexts: Option<PathBuf>,
    pub objective: String,
    pub learners: u64,
    pub constructs_per_learner: usize,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub parallelism: usize,
    pub retry_budget: u32,
    pub timestamps: bool,
    pub backend: BackendSpec,
    pub thresholds: Thresholds,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            statistics: None,
            actions: None,
            annotations: None,
            contexts: None,
            objective: DEFAULT_OBJECTIVE.to_string(),
            learners: 50,
            constructs_per_learner: 5,
            n: 100,
            k: 5,
            seed: 0,
            out: PathBuf::from("runs"),
            run_id: None,
            parallelism: 0,
            retry_budget: DEFAULT_RETRY_BUDGET,
            timestamps: false,
            backend: BackendSpec::default(),
            thresholds: Thresholds::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form, with
    /// the output location (`out`, `run_id`) left out.
    pub fn hash(&self) -> String {
        let content = RunConfig { out: PathBuf::new(), run_id: None, ..self.clone() };
        let json = serde_json::to_string(&content).expect("config serializes");
        crate::sha256_hex(json)[..12].to_string()
    }

    fn check_path(what: &str, p: &Option<PathBuf>) -> Result<()> {
        match p {
            Some(p) if !p.exists() => Err(Error::Config(format!("{what} path {} does not exist", p.display()))),
            _ => Ok(()),
        }
    }

    /// Validates everything that can be checked without touching a backend.
    pub fn validate(&self, actions: &ActionSpace) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.k == 0 || self.k > actions.len() {
            return Err(Error::Config(format!("k = {} outside 1..={}", self.k, actions.len())));
        }
        if self.learners == 0 {
            return Err(Error::Config("learners must be at least 1".into()));
        }
        if self.constructs_per_learner == 0 {
            return Err(Error::Config("constructs_per_learner must be at least 1".into()));
        }
        if self.objective.trim().is_empty() {
            return Err(Error::Config("objective is empty".into()));
        }
        if !self.thresholds.relevance.is_finite() || self.thresholds.influence.is_some_and(|t| !t.is_finite()) {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        Self::check_path("statistics", &self.statistics)?;
        Self::check_path("actions", &self.actions)?;
        Self::check_path("annotations", &self.annotations)?;
        Self::check_path("contexts", &self.contexts)?;
        Self::check_path("scripted law", &self.backend.law)?;
        Ok(())
    }
}

/// Builds the backend described by `spec` for runs selecting `k` strategies.
/// `run_dir` supplies the default replay cache location.
pub fn build_backend(spec: &BackendSpec, k: usize, run_dir: &Path) -> Result<Arc<dyn Backend>> {
    let direct = |kind: BackendKind| -> Result<Arc<dyn Backend>> {
        match kind {
            BackendKind::Http => {
                let cfg = spec.http.clone().ok_or_else(|| Error::Config("http backend needs [backend.http]".into()))?;
                Ok(Arc::new(HttpBackend::new(cfg)?))
            }
            BackendKind::Scripted => {
                let path = spec.law.as_ref().ok_or_else(|| Error::Config("scripted backend needs a law file".into()))?;
                let text = std::fs::read_to_string(path).map_err(io_err(path))?;
                let backend = ScriptedBackend::from_json(&text)?;
                if backend.law().k != k {
                    return Err(Error::Config(format!(
                        "scripted law {} selects k = {}, run uses k = {k}",
                        path.display(),
                        backend.law().k
                    )));
                }
                Ok(Arc::new(backend))
            }
            BackendKind::Replay => Err(Error::Config("replay cannot record from another replay backend".into())),
        }
    };
    match spec.kind {
        BackendKind::Replay => {
            let dir = spec.cache.clone().unwrap_or_else(|| run_dir.join("cache"));
            let backend = match spec.record {
                Some(inner) => ReplayBackend::recording(dir, direct(inner)?)?,
                None => ReplayBackend::strict(dir)?,
            };
            Ok(Arc::new(backend))
        }
        kind => direct(kind),
    }
}

/// Provenance attached to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub backend_id: String,
    pub template_hash: String,
}

/// One learner's row in the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerComparison {
    pub profile_id: String,
    pub context_id: String,
    pub constructs: Vec<String>,
    pub f_control: f64,
    pub f_intervention: f64,
    pub f_expert: f64,
    pub deviation: DeviationReport,
    pub control: BTreeMap<String, f64>,
    pub intervention: BTreeMap<String, f64>,
    pub expert: BTreeMap<String, f64>,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub schema_version: u32,
    pub learners: usize,
    pub fraction_below_diagonal: f64,
    pub fraction_reduction_at_least_10pct: f64,
    pub mean_absolute_reduction: f64,
    /// Over learners with a positive control deviation.
    pub mean_relative_reduction: Option<f64>,
    pub mean_f_control: f64,
    pub mean_f_intervention: f64,
    pub mean_f_expert: f64,
    pub task1_alpha: f64,
    pub task3_alpha: Option<f64>,
    pub task2_mean_overlap: Option<f64>,
    pub degraded_learners: Vec<String>,
    pub provenance: RunProvenance,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub rows: Vec<LearnerComparison>,
    pub summary: CompareSummary,
}

impl CompareOutcome {
    pub fn degraded(&self) -> bool {
        !self.summary.degraded_learners.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateReport {
    pub schema_version: u32,
    pub context_id: String,
    pub records: Vec<InfluenceRecord>,
    pub influence_threshold: f64,
    /// `median` or `configured`.
    pub influence_threshold_rule: String,
    pub relevance_threshold: f64,
    pub spearman: SpearmanResult,
    pub shared_baseline: bool,
    pub provenance: RunProvenance,
}

impl AblateReport {
    pub fn degraded(&self) -> bool {
        self.records.iter().any(|r| r.degraded)
    }
}

/// Which state `estimate` targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EstimateTarget {
    /// The objective-only control state.
    Control,
    /// The full context of learner `index`.
    Learner(u64),
}

/// A configured run bound to a backend and an output directory.
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub model: PsychometricModel,
    pub engine: PolicyEngine,
    backend: Arc<dyn Backend>,
    config_hash: String,
}

impl Run {
    /// Loads inputs, creates the run directory and builds the configured
    /// backend.
    pub fn open(config: RunConfig) -> Result<Self> {
        Self::open_inner(config, None)
    }

    /// Like [`Run::open`] with an injected backend.
    pub fn with_backend(config: RunConfig, backend: Arc<dyn Backend>) -> Result<Self> {
        Self::open_inner(config, Some(backend))
    }

    fn open_inner(config: RunConfig, backend: Option<Arc<dyn Backend>>) -> Result<Self> {
        let actions = match &config.actions {
            Some(p) => ActionSpace::from_path(p)?,
            None => ActionSpace::default_catalog(),
        };
        config.validate(&actions)?;
        let model = match &config.statistics {
            Some(p) => PsychometricModel::from_path(p)?,
            None => PsychometricModel::mslq(),
        };
        let config_hash = config.hash();
        let run_id = config.run_id.clone().unwrap_or_else(|| {
            format!("{}-{config_hash}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"))
        });
        let dir = config.out.join(run_id);
        for sub in ["learners", "estimates", "reports"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(io_err(p))?;
        }
        let backend = match backend {
            Some(b) => b,
            None => build_backend(&config.backend, config.k, &dir)?,
        };
        let cfg_path = dir.join("config.json");
        let cfg_json = serde_json::to_string_pretty(&config).expect("config serializes") + "\n";
        std::fs::write(&cfg_path, cfg_json).map_err(io_err(cfg_path))?;

        let mut engine = PolicyEngine::new(actions).with_retry_budget(config.retry_budget);
        if config.parallelism > 0 {
            engine = engine.with_parallelism(config.parallelism);
        }
        engine.timestamps = config.timestamps;
        info!("run directory {}", dir.display());
        Ok(Self { config, dir, model, engine, backend, config_hash })
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    fn provenance(&self) -> RunProvenance {
        RunProvenance {
            config_hash: self.config_hash.clone(),
            seed: self.config.seed,
            n: self.config.n,
            k: self.config.k,
            backend_id: self.backend.id(),
            template_hash: self.engine.template.hash().to_string(),
        }
    }

    fn seeds(&self) -> SeedStream {
        SeedStream::new(self.config.seed)
    }

    /// Constructs shown to learner `index`: a seeded subset in model order.
    fn selected_constructs(&self, index: u64) -> Vec<String> {
        let ids: Vec<String> = self.model.constructs().iter().map(|c| c.id.clone()).collect();
        let m = self.config.constructs_per_learner.min(ids.len());
        let mut rng = self.seeds().child("selection").index(index).rng();
        let mut picks = sample(&mut rng, ids.len(), m).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| ids[i].clone()).collect()
    }

    fn learner_record(&self, index: u64) -> Result<ArchiveRecord> {
        let profile = self.model.generate_profile(self.config.seed, index);
        let selected = self.selected_constructs(index);
        let opts = AssembleOptions {
            selected_constructs: Some(&selected),
            nulls: &[],
            seed: self.seeds().child("context").index(index).as_u64(),
            renderer: Renderer::Template,
            context_id: None,
        };
        let context = assemble_context(&profile, &self.model, &self.config.objective, &opts)?;
        Ok(ArchiveRecord::new(profile, context))
    }

    /// Samples learners and writes `learners/contexts.jsonl`.
    pub fn generate(&self) -> Result<Vec<ArchiveRecord>> {
        let records = (0..self.config.learners).map(|i| self.learner_record(i)).collect::<Result<Vec<_>>>()?;
        let path = self.dir.join("learners").join("contexts.jsonl");
        write_file(&path, |buf| write_archive(buf, &records).map_err(Error::from))?;
        info!("wrote {} learner contexts to {}", records.len(), path.display());
        Ok(records)
    }

    /// The configured context archive, or freshly generated learners.
    pub fn contexts(&self) -> Result<Vec<ArchiveRecord>> {
        match &self.config.contexts {
            Some(p) => Ok(read_archive_file(p)?),
            None => self.generate(),
        }
    }

    fn estimate_to(&self, state: &PolicyState<'_>, seed: u64, name: &str) -> Result<PolicyEstimate> {
        let est = self.engine.estimate(self.backend.as_ref(), state, self.config.n, self.config.k, seed)?;
        let path = self.dir.join("estimates").join(format!("{name}.json"));
        est.write(&path).map_err(Error::from)?;
        Ok(est)
    }

    /// Estimates a single state and writes it under `estimates/`.
    pub fn estimate(&self, target: &EstimateTarget) -> Result<PolicyEstimate> {
        match target {
            EstimateTarget::Control => {
                let state = PolicyState::ObjectiveOnly { objective: &self.config.objective };
                self.estimate_to(&state, self.seeds().child("estimate").as_u64(), "control")
            }
            EstimateTarget::Learner(i) => {
                let records = self.contexts()?;
                let rec = records
                    .iter()
                    .find(|r| r.profile.index == *i)
                    .ok_or_else(|| Error::Usage(format!("no learner with index {i}")))?;
                let seed = self.seeds().child("estimate").index(*i).as_u64();
                self.estimate_to(&PolicyState::Context(&rec.context), seed, &rec.profile.profile_id)
            }
        }
    }

    fn expert(&self, characteristic_keys: BTreeSet<String>) -> Result<(ExpertAnnotations, ExpertReference)> {
        let path = self
            .config
            .annotations
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs an annotations file".into()))?;
        let ann = ExpertAnnotations::from_path(path, &self.engine.actions, Some(&characteristic_keys))?;
        let reference = ExpertReference::build(&ann)?;
        Ok((ann, reference))
    }

    fn characteristic_universe(&self) -> BTreeSet<String> {
        self.model
            .constructs()
            .iter()
            .map(|c| c.id.clone())
            .chain(NullCharacteristic::catalog().into_iter().map(|n| n.id))
            .collect()
    }

    /// Control versus intervention against the expert reference for every
    /// learner. Both estimates for a learner share one seed.
    pub fn compare(&self) -> Result<CompareOutcome> {
        let records = self.contexts()?;
        let (_, expert) = self.expert(self.characteristic_universe())?;
        let orientation = &expert.orientation_score;

        let mut rows = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let ctx = &rec.context;
            let seed = self.seeds().child("compare").index(i as u64).as_u64();
            let pid = &rec.profile.profile_id;
            let control_state = PolicyState::ObjectiveOnly { objective: &ctx.objective };
            let control = self.estimate_to(&control_state, seed, &format!("{pid}-control"))?;
            let intervention = self.estimate_to(&PolicyState::Context(ctx), seed, &format!("{pid}-intervention"))?;

            let keys: Vec<&str> = ctx.characteristics.iter().filter_map(|c| c.construct_id()).collect();
            let expert_policy = expert.context_policy(&keys)?;
            let (pc, pi) = (control.policy(), intervention.policy());
            rows.push(LearnerComparison {
                profile_id: pid.clone(),
                context_id: ctx.context_id.clone(),
                constructs: keys.iter().map(|s| s.to_string()).collect(),
                f_control: learner_centeredness(&pc, orientation)?,
                f_intervention: learner_centeredness(&pi, orientation)?,
                f_expert: learner_centeredness(&expert_policy, orientation)?,
                deviation: deviation_report(&pc, &pi, &expert_policy)?,
                control: pc.as_map().clone(),
                intervention: pi.as_map().clone(),
                expert: expert_policy.as_map().clone(),
                degraded: control.degraded || intervention.degraded,
            });
        }

        let m = rows.len() as f64;
        let mean = |f: &dyn Fn(&LearnerComparison) -> f64| rows.iter().map(f).sum::<f64>() / m;
        let relative: Vec<f64> = rows.iter().filter_map(|r| r.deviation.relative_reduction).collect();
        let summary = CompareSummary {
            schema_version: REPORT_SCHEMA_VERSION,
            learners: rows.len(),
            fraction_below_diagonal: rows.iter().filter(|r| r.deviation.below_diagonal()).count() as f64 / m,
            fraction_reduction_at_least_10pct: rows.iter().filter(|r| r.deviation.meets_reduction_bucket()).count()
                as f64
                / m,
            mean_absolute_reduction: mean(&|r| r.deviation.absolute_reduction),
            mean_relative_reduction: (!relative.is_empty())
                .then(|| relative.iter().sum::<f64>() / relative.len() as f64),
            mean_f_control: mean(&|r| r.f_control),
            mean_f_intervention: mean(&|r| r.f_intervention),
            mean_f_expert: mean(&|r| r.f_expert),
            task1_alpha: expert.task1_alpha,
            task3_alpha: expert.task3_alpha,
            task2_mean_overlap: expert.task2_mean_overlap,
            degraded_learners: rows.iter().filter(|r| r.degraded).map(|r| r.profile_id.clone()).collect(),
            provenance: self.provenance(),
        };
        self.write_compare(&rows, &summary)?;
        Ok(CompareOutcome { rows, summary })
    }

    fn write_compare(&self, rows: &[LearnerComparison], summary: &CompareSummary) -> Result<()> {
        let reports = self.dir.join("reports");

        let mut w = csv_writer(&reports.join("fig1_learner_centeredness.csv"))?;
        w.write_record(["learner", "context_id", "f_control", "f_intervention", "f_expert"])?;
        for r in rows {
            w.write_record([
                r.profile_id.clone(),
                r.context_id.clone(),
                fmt_f(r.f_control),
                fmt_f(r.f_intervention),
                fmt_f(r.f_expert),
            ])?;
        }
        w.flush().map_err(io_err(&reports))?;

        let mut w = csv_writer(&reports.join("fig2_policies.csv"))?;
        w.write_record(["learner", "strategy", "control", "intervention", "expert"])?;
        for r in rows {
            for name in self.engine.actions.names() {
                w.write_record([
                    r.profile_id.clone(),
                    name.to_string(),
                    fmt_f(r.control.get(name).copied().unwrap_or(0.0)),
                    fmt_f(r.intervention.get(name).copied().unwrap_or(0.0)),
                    fmt_f(r.expert.get(name).copied().unwrap_or(0.0)),
                ])?;
            }
        }
        w.flush().map_err(io_err(&reports))?;

        let mut w = csv_writer(&reports.join("fig3_deviation.csv"))?;
        w.write_record(["learner", "dev_control", "dev_intervention", "absolute_reduction", "relative_reduction"])?;
        for r in rows {
            let d = &r.deviation;
            w.write_record([
                r.profile_id.clone(),
                fmt_f(d.dev_control),
                fmt_f(d.dev_intervention),
                fmt_f(d.absolute_reduction),
                d.relative_reduction.map(fmt_f).unwrap_or_else(|| "undefined".into()),
            ])?;
        }
        w.flush().map_err(io_err(&reports))?;

        write_json(&reports.join("compare_learners.json"), &rows)?;
        write_json(&reports.join("compare_summary.json"), summary)
    }

    /// The full-profile context used for ablation: every construct plus the
    /// null catalog when enabled.
    pub fn ablation_context(&self) -> Result<ArchiveRecord> {
        let index = self.config.ablation.learner;
        let profile = self.model.generate_profile(self.config.seed, index);
        let nulls = if self.config.ablation.nulls { NullCharacteristic::catalog() } else { Vec::new() };
        let opts = AssembleOptions {
            selected_constructs: None,
            nulls: &nulls,
            seed: self.seeds().child("ablation-context").index(index).as_u64(),
            renderer: Renderer::Template,
            context_id: Some(format!("ablation-{}", profile.profile_id)),
        };
        let context = assemble_context(&profile, &self.model, &self.config.objective, &opts)?;
        Ok(ArchiveRecord::new(profile, context))
    }

    /// Leave-one-out influence for every characteristic of the ablation
    /// context, quadrant labels and the relevance/influence rank correlation.
    pub fn ablate(&self) -> Result<AblateReport> {
        let record = self.ablation_context()?;
        let path = self.dir.join("learners").join("ablation_context.jsonl");
        write_file(&path, |buf| write_archive(buf, std::slice::from_ref(&record)).map_err(Error::from))?;
        let ctx = &record.context;

        let (_, expert) = self.expert(self.characteristic_universe())?;
        let missing: Vec<String> = ctx
            .characteristics
            .iter()
            .map(|c| c.reference_key())
            .filter(|k| !expert.relevance.contains_key(*k))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(crate::expert::ExpertError::MissingRelevance(missing).into());
        }

        let ablate_seeds = self.seeds().child("ablate");
        let shared = self.config.ablation.shared_baseline;
        let shared_baseline = if shared {
            Some(self.estimate_to(&PolicyState::Context(ctx), ablate_seeds.as_u64(), "ablation-baseline")?)
        } else {
            None
        };

        let mut measured = Vec::with_capacity(ctx.characteristics.len());
        for (i, ch) in ctx.characteristics.iter().enumerate() {
            let ablated_ctx = ctx.omit_characteristic(i)?;
            let (baseline, baseline_name, seed) = match &shared_baseline {
                Some(b) => (b.clone(), "ablation-baseline".to_string(), ablate_seeds.as_u64()),
                None => {
                    let seed = ablate_seeds.index(i as u64).as_u64();
                    let name = format!("ablation-baseline-{i:02}");
                    (self.estimate_to(&PolicyState::Context(ctx), seed, &name)?, name, seed)
                }
            };
            let ablated_name = format!("ablation-minus-{i:02}");
            let ablated = self.estimate_to(&PolicyState::Context(&ablated_ctx), seed, &ablated_name)?;
            let m = influence_from(baseline, ablated)?;
            info!("influence of {}: {:.4}", ch.reference_key(), m.influence);
            measured.push((ch, m.influence, m.degraded, baseline_name, ablated_name));
        }

        let influences: Vec<f64> = measured.iter().map(|m| m.1).collect();
        let (influence_threshold, rule) = match self.config.thresholds.influence {
            Some(t) => (t, "configured"),
            None => (median(&influences).expect("ablation context is non-empty"), "median"),
        };
        let relevance_threshold = self.config.thresholds.relevance;
        let records = measured
            .into_iter()
            .map(|(ch, influence, degraded, baseline_estimate, ablated_estimate)| {
                let relevance = expert.relevance[ch.reference_key()];
                Ok(InfluenceRecord {
                    characteristic: ch.reference_key().to_string(),
                    text: ch.text.clone(),
                    is_null: ch.is_null(),
                    influence,
                    relevance,
                    quadrant: quadrant_classify(relevance, influence, influence_threshold, relevance_threshold)?,
                    degraded,
                    baseline_estimate,
                    ablated_estimate,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let relevances: Vec<f64> = records.iter().map(|r| r.relevance).collect();
        let spearman = spearman(
            &relevances,
            &influences,
            self.config.ablation.permutations,
            self.seeds().child("spearman").as_u64(),
        )?;
        let report = AblateReport {
            schema_version: REPORT_SCHEMA_VERSION,
            context_id: ctx.context_id.clone(),
            records,
            influence_threshold,
            influence_threshold_rule: rule.to_string(),
            relevance_threshold,
            spearman,
            shared_baseline: shared,
            provenance: self.provenance(),
        };
        self.write_ablate(&report)?;
        Ok(report)
    }

    fn write_ablate(&self, report: &AblateReport) -> Result<()> {
        let reports = self.dir.join("reports");
        let mut w = csv_writer(&reports.join("fig4_relevance_influence.csv"))?;
        w.write_record(["characteristic", "relevance", "influence", "quadrant"])?;
        for r in &report.records {
            w.write_record([r.characteristic.clone(), fmt_f(r.relevance), fmt_f(r.influence), r.quadrant.as_str().into()])?;
        }
        w.flush().map_err(io_err(&reports))?;
        write_json(&reports.join("ablate_report.json"), report)
    }
}

/// Text summary of a comparison.
pub fn format_compare(s: &CompareSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "compare ({} learners, n = {}, k = {})", s.learners, s.provenance.n, s.provenance.k);
    let _ = writeln!(out, "  below diagonal:              {:.1}%", 100.0 * s.fraction_below_diagonal);
    let _ = writeln!(out, "  reduction >= 10%:            {:.1}%", 100.0 * s.fraction_reduction_at_least_10pct);
    let _ = writeln!(out, "  mean absolute reduction:     {:.4}", s.mean_absolute_reduction);
    let relative = s.mean_relative_reduction.map_or("undefined".to_string(), |r| format!("{:.1}%", 100.0 * r));
    let _ = writeln!(out, "  mean relative reduction:     {relative}");
    let _ = writeln!(
        out,
        "  learner-centeredness F:      control {:.3}, intervention {:.3}, expert {:.3}",
        s.mean_f_control, s.mean_f_intervention, s.mean_f_expert
    );
    let _ = writeln!(out, "  orientation alpha:           {:.3}", s.task1_alpha);
    if !s.degraded_learners.is_empty() {
        let _ = writeln!(out, "  degraded learners:           {}", s.degraded_learners.join(", "));
    }
    out
}

/// Text summary of an ablation: thresholds, quadrant counts, rank correlation.
pub fn format_ablate(r: &AblateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ablate ({}, {} characteristics)", r.context_id, r.records.len());
    let _ = writeln!(
        out,
        "  thresholds: influence {:.4} ({}), relevance {:.2}",
        r.influence_threshold, r.influence_threshold_rule, r.relevance_threshold
    );
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in &r.records {
        *counts.entry(rec.quadrant.as_str()).or_default() += 1;
    }
    for (q, c) in counts {
        let _ = writeln!(out, "  {q:<13} {c}");
    }
    match (r.spearman.rho, r.spearman.p_value) {
        (Some(rho), Some(p)) => {
            let _ = writeln!(out, "  spearman rho {rho:.3}, p = {p:.4} ({} permutations)", r.spearman.permutations);
        }
        _ => {
            let _ = writeln!(out, "  spearman rho undefined (constant series)");
        }
    }
    if r.degraded() {
        let _ = writeln!(out, "  some estimates degraded; see ablate_report.json");
    }
    out
}

/// Human-readable summary of whatever reports exist in `run_dir`.
pub fn report(run_dir: &Path) -> Result<String> {
    let reports = run_dir.join("reports");
    let mut out = String::new();
    let compare_path = reports.join("compare_summary.json");
    if compare_path.exists() {
        out.push_str(&format_compare(&read_json(&compare_path)?));
    }
    let ablate_path = reports.join("ablate_report.json");
    if ablate_path.exists() {
        out.push_str(&format_ablate(&read_json(&ablate_path)?));
    }
    if out.is_empty() {
        return Err(Error::Usage(format!("no reports found under {}", reports.display())));
    }
    Ok(out)
}

fn fmt_f(x: f64) -> String {
    format!("{x:.10}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn write_file(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    std::fs::write(path, buf).map_err(io_err(path))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_round_trip_through_toml() {
        let cfg = RunConfig::from_toml("seed = 7\n[backend]\nkind = \"replay\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.learners, 50);
        assert_eq!(cfg.backend.kind, BackendKind::Replay);
        assert_eq!(cfg.thresholds.relevance, 3.0);
        let again = RunConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("sead = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn k_larger_than_catalog_rejected() {
        let cfg = RunConfig { k: 23, ..RunConfig::default() };
        assert!(cfg.validate(&ActionSpace::default_catalog()).is_err());
    }

    #[test]
    fn missing_law_path_rejected_at_launch() {
        let cfg = RunConfig {
            backend: BackendSpec { law: Some("/nonexistent/law.json".into()), ..BackendSpec::default() },
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(&ActionSpace::default_catalog()), Err(Error::Config(_))));
    }

    #[test]
    fn learner_subsets_are_seeded_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out: dir.path().into(), run_id: Some("t".into()), ..RunConfig::default() };
        let law = crate::gateway::ScriptedLaw::wildcard(
            5,
            0,
            ActionSpace::default_catalog().names().map(|n| (n.to_string(), 1.0)).collect(),
        );
        let run = Run::with_backend(cfg, Arc::new(ScriptedBackend::new(law).unwrap())).unwrap();
        let a = run.selected_constructs(3);
        assert_eq!(a, run.selected_constructs(3));
        assert_eq!(a.len(), 5);
        let pos: Vec<usize> = a.iter().map(|id| run.model.construct_position(id).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }
}

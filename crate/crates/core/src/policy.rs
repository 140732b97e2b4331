//! The instructional-design decision task and empirical policy estimation.
//!
//! A trial shows the model one state and the action space and asks for
//! exactly `k` distinct strategies. Over `N` trials the estimate is
//! `count(a) / (N_valid * k)`; trials that fail to parse after the retry
//! budget are dropped from the denominator.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::LearningContext;
use crate::gateway::{Backend, CompletionRequest, GatewayError, RequestTag};

static STRATEGY_CATALOG: &str = include_str!("../assets/strategies.json");
static PROMPT_TEMPLATE_V1: &str = include_str!("../assets/prompt_template_v1.txt");

pub const ESTIMATE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_RETRY_BUDGET: u32 = 3;
/// Fraction of trials that must be valid for a non-degraded estimate.
pub const VALID_FRACTION: f64 = 0.9;
const PROPER_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("action catalog: {0}")]
    Catalog(String),
    #[error("k = {k} must be between 1 and the number of actions ({actions})")]
    InvalidK { k: usize, actions: usize },
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("all {trials} trials failed for state `{state_ref}`")]
    NoValidTrials { state_ref: String, trials: usize },
    #[error("not a probability distribution: {0}")]
    Improper(String),
    #[error("prompt template must contain {{{{state}}}}, {{{{actions}}}} and {{{{k}}}}")]
    Template,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("estimate file: {0}")]
    Io(#[from] std::io::Error),
    #[error("estimate file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("expected {expected} strategies, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("duplicate selection `{0}`")]
    Duplicate(String),
    #[error("`{0}` is not in the action space")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: String,
    pub definition: String,
}

/// Lower-cased alphanumerics only, so `"worked  examples!"` matches
/// `"Worked Examples"`.
pub fn normalize_name(s: &str) -> String {
    s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    strategies: Vec<Strategy>,
    by_normalized: BTreeMap<String, usize>,
}

impl ActionSpace {
    pub fn new(strategies: Vec<Strategy>) -> Result<Self, PolicyError> {
        if strategies.is_empty() {
            return Err(PolicyError::Catalog("no strategies".into()));
        }
        let mut by_normalized = BTreeMap::new();
        for (i, s) in strategies.iter().enumerate() {
            let key = normalize_name(&s.name);
            if key.is_empty() {
                return Err(PolicyError::Catalog(format!("strategies[{i}].name is empty")));
            }
            if by_normalized.insert(key, i).is_some() {
                return Err(PolicyError::Catalog(format!("strategies[{i}].name `{}` is a duplicate", s.name)));
            }
        }
        Ok(Self { strategies, by_normalized })
    }

    /// The bundled 22-strategy catalog.
    pub fn default_catalog() -> Self {
        Self::from_json(STRATEGY_CATALOG).expect("bundled catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        #[derive(Deserialize)]
        struct Catalog {
            schema_version: u32,
            strategies: Vec<Strategy>,
        }
        let c: Catalog = serde_json::from_str(text).map_err(|e| PolicyError::Catalog(e.to_string()))?;
        if c.schema_version != 1 {
            return Err(PolicyError::Catalog(format!("unsupported schema_version {}", c.schema_version)));
        }
        Self::new(c.strategies)
    }

    pub fn from_path(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.iter().map(|s| s.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.strategies.iter().any(|s| s.name == name)
    }

    /// Canonical name for a loosely written one.
    pub fn resolve(&self, raw: &str) -> Option<&str> {
        self.by_normalized.get(&normalize_name(raw)).map(|&i| self.strategies[i].name.as_str())
    }
}

/// A probability distribution over strategy names. Missing names read as 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(BTreeMap<String, f64>);

impl Policy {
    /// Wraps raw probabilities, checking they are non-negative and sum to 1
    /// within 1e-6.
    pub fn new(probs: BTreeMap<String, f64>) -> Result<Self, PolicyError> {
        let p = Policy(probs);
        p.check()?;
        Ok(p)
    }

    /// Normalises non-negative weights.
    pub fn from_weights(weights: BTreeMap<String, f64>) -> Result<Self, PolicyError> {
        if let Some((k, v)) = weights.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(PolicyError::Improper(format!("weight for `{k}` is {v}")));
        }
        let total: f64 = weights.values().sum();
        if total <= 0.0 {
            return Err(PolicyError::Improper("weights sum to zero".into()));
        }
        Ok(Policy(weights.into_iter().map(|(k, v)| (k, v / total)).collect()))
    }

    /// Uniform mass over `names`.
    pub fn uniform<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self, PolicyError> {
        Self::from_weights(names.into_iter().map(|n| (n.to_string(), 1.0)).collect())
    }

    /// Equal-weight mixture, renormalised.
    pub fn mixture(parts: &[Policy]) -> Result<Self, PolicyError> {
        if parts.is_empty() {
            return Err(PolicyError::Improper("mixture of zero policies".into()));
        }
        let mut acc: BTreeMap<String, f64> = BTreeMap::new();
        for p in parts {
            for (k, v) in &p.0 {
                *acc.entry(k.clone()).or_insert(0.0) += v;
            }
        }
        Self::from_weights(acc)
    }

    pub fn check(&self) -> Result<(), PolicyError> {
        if let Some((k, v)) = self.0.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(PolicyError::Improper(format!("probability for `{k}` is {v}")));
        }
        let total: f64 = self.0.values().sum();
        if (total - 1.0).abs() > PROPER_TOL {
            return Err(PolicyError::Improper(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> f64 {
        self.0.get(name).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Names with positive probability.
    pub fn support(&self) -> impl Iterator<Item = &str> {
        self.0.iter().filter(|(_, v)| **v > 0.0).map(|(k, _)| k.as_str())
    }

    pub fn as_map(&self) -> &BTreeMap<String, f64> {
        &self.0
    }
}

/// What the model is shown.
#[derive(Debug, Clone, Copy)]
pub enum PolicyState<'a> {
    /// Control condition: the learning objective alone.
    ObjectiveOnly { objective: &'a str },
    Context(&'a LearningContext),
}

impl PolicyState<'_> {
    pub fn state_ref(&self) -> String {
        match self {
            PolicyState::ObjectiveOnly { .. } => "objective-only".to_string(),
            PolicyState::Context(c) => c.context_id.clone(),
        }
    }

    pub fn render(&self) -> String {
        match self {
            PolicyState::ObjectiveOnly { objective } => crate::context::render_state(std::iter::empty(), objective),
            PolicyState::Context(c) => c.render_state(),
        }
    }
}

/// A versioned prompt template with `{{state}}`, `{{actions}}`, `{{k}}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    hash: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(PROMPT_TEMPLATE_V1).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PolicyError> {
        let text = text.into();
        if !["{{state}}", "{{actions}}", "{{k}}"].iter().all(|p| text.contains(p)) {
            return Err(PolicyError::Template);
        }
        let hash = crate::sha256_hex(text.as_bytes());
        Ok(Self { text, hash })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn build(&self, state: &PolicyState<'_>, actions: &ActionSpace, k: usize) -> Result<String, PolicyError> {
        if k == 0 || k > actions.len() {
            return Err(PolicyError::InvalidK { k, actions: actions.len() });
        }
        let listing = actions
            .strategies()
            .iter()
            .map(|s| format!("- {}: {}", s.name, s.definition))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(self
            .text
            .replace("{{actions}}", &listing)
            .replace("{{k}}", &k.to_string())
            .replace("{{state}}", &state.render()))
    }
}

/// Prompt for one trial using the bundled template.
pub fn build_prompt(state: &PolicyState<'_>, actions: &ActionSpace, k: usize) -> Result<String, PolicyError> {
    PromptTemplate::default().build(state, actions, k)
}

fn structured_list(raw: &str) -> Option<Vec<String>> {
    let strings = |v: &serde_json::Value| -> Option<Vec<String>> {
        v.as_array()?.iter().map(|x| x.as_str().map(str::to_string)).collect()
    };
    if let (Some(a), Some(b)) = (raw.find('{'), raw.rfind('}')) {
        if a < b {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&raw[a..=b]) {
                if let Some(list) = v.get("strategies").and_then(strings) {
                    return Some(list);
                }
            }
        }
    }
    if let (Some(a), Some(b)) = (raw.find('['), raw.rfind(']')) {
        if a < b {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&raw[a..=b]) {
                return strings(&v);
            }
        }
    }
    None
}

/// Parses a model response into exactly `k` distinct canonical names.
///
/// A JSON list (bare or under `"strategies"`) is preferred. Otherwise each
/// line is scanned for a single strategy name.
pub fn parse_selection(raw: &str, actions: &ActionSpace, k: usize) -> Result<Vec<String>, ParseError> {
    let mut picked: Vec<String> = Vec::with_capacity(k);
    if let Some(list) = structured_list(raw) {
        for token in list {
            let name = actions.resolve(&token).ok_or_else(|| ParseError::UnknownStrategy(token.clone()))?;
            if picked.iter().any(|p| p == name) {
                return Err(ParseError::Duplicate(name.to_string()));
            }
            picked.push(name.to_string());
        }
    } else {
        let names: Vec<(String, &str)> = actions.names().map(|n| (normalize_name(n), n)).collect();
        for line in raw.lines() {
            let norm = normalize_name(line);
            if norm.is_empty() {
                continue;
            }
            let hits: Vec<&str> = names.iter().filter(|(k, _)| norm.contains(k.as_str())).map(|(_, n)| *n).collect();
            // a line naming several strategies is ambiguous; keep the longest
            // match only when it contains every other hit
            let hit = match hits.as_slice() {
                [one] => Some(*one),
                [] => None,
                many => {
                    let longest = many.iter().max_by_key(|n| normalize_name(n).len()).copied().unwrap();
                    let ln = normalize_name(longest);
                    many.iter().all(|n| ln.contains(&normalize_name(n))).then_some(longest)
                }
            };
            if let Some(h) = hit {
                if !picked.iter().any(|p| p == h) {
                    picked.push(h.to_string());
                }
            }
        }
    }
    if picked.len() != k {
        return Err(ParseError::WrongCount { expected: k, found: picked.len() });
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateProvenance {
    pub backend_id: String,
    pub prompt_hash: String,
    pub template_hash: String,
    pub seed: u64,
    pub retry_budget: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Empirical policy for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEstimate {
    pub schema_version: u32,
    pub state_ref: String,
    pub probabilities: BTreeMap<String, f64>,
    pub raw_counts: BTreeMap<String, u64>,
    pub trials: usize,
    pub valid_trials: usize,
    pub k: usize,
    pub degraded: bool,
    pub provenance: EstimateProvenance,
}

impl PolicyEstimate {
    /// Folds valid trial selections into an estimate. Independent of the order
    /// of `outcomes`.
    pub fn aggregate(
        state_ref: String,
        actions: &ActionSpace,
        outcomes: &[Vec<String>],
        trials: usize,
        k: usize,
        provenance: EstimateProvenance,
    ) -> Result<Self, PolicyError> {
        if outcomes.is_empty() {
            return Err(PolicyError::NoValidTrials { state_ref, trials });
        }
        let mut raw_counts: BTreeMap<String, u64> = actions.names().map(|n| (n.to_string(), 0)).collect();
        for sel in outcomes {
            for name in sel {
                *raw_counts.get_mut(name).expect("selections are canonical names") += 1;
            }
        }
        let valid = outcomes.len();
        let denom = (valid * k) as f64;
        let probabilities = raw_counts.iter().map(|(n, c)| (n.clone(), *c as f64 / denom)).collect();
        let needed = (VALID_FRACTION * trials as f64).ceil() as usize;
        Ok(Self {
            schema_version: ESTIMATE_SCHEMA_VERSION,
            state_ref,
            probabilities,
            raw_counts,
            trials,
            valid_trials: valid,
            k,
            degraded: valid < needed,
            provenance,
        })
    }

    pub fn policy(&self) -> Policy {
        Policy(self.probabilities.clone())
    }

    pub fn dropped_trials(&self) -> usize {
        self.trials - self.valid_trials
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, PolicyError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Settings shared by every estimate in a run.
#[derive(Debug, Clone)]
pub struct PolicyEngine {
    pub actions: ActionSpace,
    pub template: PromptTemplate,
    pub retry_budget: u32,
    /// Worker threads for concurrent trials; 0 uses the global pool.
    pub parallelism: usize,
    /// Stamp estimates with wall-clock time.
    pub timestamps: bool,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl PolicyEngine {
    pub fn new(actions: ActionSpace) -> Self {
        Self {
            actions,
            template: PromptTemplate::default(),
            retry_budget: DEFAULT_RETRY_BUDGET,
            parallelism: 0,
            timestamps: false,
            pool: None,
        }
    }

    pub fn with_parallelism(mut self, threads: usize) -> Self {
        self.parallelism = threads;
        self.pool = (threads > 0).then(|| {
            Arc::new(rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool"))
        });
        self
    }

    pub fn with_retry_budget(mut self, retries: u32) -> Self {
        self.retry_budget = retries;
        self
    }

    /// Runs `n` independent trials of the decision task and aggregates them.
    pub fn estimate(
        &self,
        backend: &dyn Backend,
        state: &PolicyState<'_>,
        n: usize,
        k: usize,
        seed: u64,
    ) -> Result<PolicyEstimate, PolicyError> {
        if n == 0 {
            return Err(PolicyError::NoTrials);
        }
        let prompt = self.template.build(state, &self.actions, k)?;
        let state_ref = state.state_ref();
        let backend_id = backend.id();

        let run_trial = |trial: u64| -> Result<Option<Vec<String>>, GatewayError> {
            for attempt in 0..=self.retry_budget {
                let request = CompletionRequest::new(
                    prompt.clone(),
                    backend_id.clone(),
                    RequestTag { state_ref: state_ref.clone(), seed, trial, attempt },
                );
                match backend.complete(&request) {
                    Ok(text) => match parse_selection(&text, &self.actions, k) {
                        Ok(sel) => return Ok(Some(sel)),
                        Err(e) => warn!("{state_ref} trial {trial} attempt {attempt}: {e}"),
                    },
                    Err(e) if e.is_fatal() => return Err(e),
                    Err(e) => warn!("{state_ref} trial {trial} attempt {attempt}: {e}"),
                }
            }
            Ok(None)
        };
        let collect = || (0..n as u64).into_par_iter().map(run_trial).collect::<Result<Vec<_>, _>>();
        let results = match &self.pool {
            Some(pool) => pool.install(collect),
            None => collect(),
        }?;
        let outcomes: Vec<Vec<String>> = results.into_iter().flatten().collect();

        let provenance = EstimateProvenance {
            backend_id,
            prompt_hash: crate::sha256_hex(prompt.as_bytes()),
            template_hash: self.template.hash().to_string(),
            seed,
            retry_budget: self.retry_budget,
            timestamp: self.timestamps.then(|| chrono::Utc::now().to_rfc3339()),
        };
        let est = PolicyEstimate::aggregate(state_ref, &self.actions, &outcomes, n, k, provenance)?;
        if est.degraded {
            warn!("estimate for {} degraded: {}/{} valid trials", est.state_ref, est.valid_trials, est.trials);
        }
        Ok(est)
    }
}

//! Deterministic stand-in for a model: draws k strategies without replacement
//! from a weighted law that may depend on the learning context in the prompt.

use std::cell::OnceCell;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, CompletionRequest, GatewayError};
use crate::seed::SeedStream;

const STATE_OPEN: &str = "<learning_context>\n";
const STATE_CLOSE: &str = "\n</learning_context>";

/// The learning-context block of a prompt, or the whole prompt when it has
/// no such block.
pub fn extract_state(prompt: &str) -> &str {
    prompt
        .find(STATE_OPEN)
        .and_then(|start| {
            let body = &prompt[start + STATE_OPEN.len()..];
            body.find(STATE_CLOSE).map(|end| &body[..end])
        })
        .unwrap_or(prompt)
}

/// Fingerprint of a rendered state block.
pub fn state_fingerprint(state: &str) -> String {
    crate::sha256_hex(state.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Fingerprint(String),
    Contains(String),
    /// At least one learner characteristic is present.
    ContextPresent,
}

impl Matcher {
    fn matches(&self, state: &str, fingerprint: &OnceCell<String>) -> bool {
        match self {
            Matcher::Fingerprint(f) => f == fingerprint.get_or_init(|| state_fingerprint(state)),
            Matcher::Contains(text) => state.contains(text.as_str()),
            Matcher::ContextPresent => state.lines().any(|l| l.starts_with("- ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawEffect {
    Replace(BTreeMap<String, f64>),
    /// `(1 - alpha) * current + alpha * toward`, both normalised first.
    Mix { alpha: f64, toward: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawRule {
    pub when: Matcher,
    #[serde(flatten)]
    pub effect: LawEffect,
}

/// Weighted selection law. `default` applies to every state; matching rules
/// then transform it in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedLaw {
    #[serde(default = "law_schema_version")]
    pub schema_version: u32,
    pub k: usize,
    pub seed: u64,
    pub default: BTreeMap<String, f64>,
    #[serde(default)]
    pub rules: Vec<LawRule>,
}

pub const LAW_SCHEMA_VERSION: u32 = 1;

fn law_schema_version() -> u32 {
    LAW_SCHEMA_VERSION
}

fn check_weights(what: &str, w: &BTreeMap<String, f64>, k: usize) -> Result<(), GatewayError> {
    if let Some((name, v)) = w.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(GatewayError::InvalidLaw(format!("{what}: weight for `{name}` is {v}")));
    }
    let positive = w.values().filter(|v| **v > 0.0).count();
    if positive < k {
        return Err(GatewayError::InvalidLaw(format!(
            "{what}: {positive} strategies with positive weight, need at least k = {k}"
        )));
    }
    Ok(())
}

fn normalized(w: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let total: f64 = w.values().sum();
    w.iter().map(|(k, v)| (k.clone(), v / total)).collect()
}

impl ScriptedLaw {
    /// A context-blind law.
    pub fn wildcard(k: usize, seed: u64, weights: BTreeMap<String, f64>) -> Self {
        Self { schema_version: LAW_SCHEMA_VERSION, k, seed, default: weights, rules: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.schema_version != LAW_SCHEMA_VERSION {
            return Err(GatewayError::InvalidLaw(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.k == 0 {
            return Err(GatewayError::InvalidLaw("k must be at least 1".into()));
        }
        check_weights("default", &self.default, self.k)?;
        for (i, rule) in self.rules.iter().enumerate() {
            match &rule.effect {
                LawEffect::Replace(w) => check_weights(&format!("rules[{i}].replace"), w, self.k)?,
                LawEffect::Mix { alpha, toward } => {
                    if !(0.0..=1.0).contains(alpha) {
                        return Err(GatewayError::InvalidLaw(format!("rules[{i}].mix.alpha {alpha} outside [0, 1]")));
                    }
                    let need = if *alpha == 1.0 { self.k } else { 1 };
                    check_weights(&format!("rules[{i}].mix.toward"), toward, need)?;
                }
            }
        }
        Ok(())
    }

    /// Effective weights for a rendered state block.
    pub fn weights_for(&self, state: &str) -> BTreeMap<String, f64> {
        let mut w = self.default.clone();
        let fingerprint = OnceCell::new();
        for rule in self.rules.iter().filter(|r| r.when.matches(state, &fingerprint)) {
            w = match &rule.effect {
                LawEffect::Replace(r) => r.clone(),
                LawEffect::Mix { alpha, toward } => {
                    let mut out: BTreeMap<String, f64> =
                        normalized(&w).into_iter().map(|(k, v)| (k, (1.0 - alpha) * v)).collect();
                    for (k, v) in normalized(toward) {
                        *out.entry(k).or_insert(0.0) += alpha * v;
                    }
                    out
                }
            };
        }
        w
    }

    /// Sequential weighted draws without replacement, renormalising after
    /// each pick.
    pub fn draw<R: Rng>(weights: &BTreeMap<String, f64>, k: usize, rng: &mut R) -> Vec<String> {
        let mut pool: Vec<(&String, f64)> = weights.iter().filter(|(_, w)| **w > 0.0).map(|(k, w)| (k, *w)).collect();
        let mut picked = Vec::with_capacity(k);
        for _ in 0..k.min(pool.len()) {
            let total: f64 = pool.iter().map(|(_, w)| w).sum();
            let mut u = rng.gen::<f64>() * total;
            let mut idx = pool.len() - 1;
            for (i, (_, w)) in pool.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            picked.push(pool.remove(idx).0.clone());
        }
        picked
    }
}

pub struct ScriptedBackend {
    law: ScriptedLaw,
    id: String,
}

impl ScriptedBackend {
    pub fn new(law: ScriptedLaw) -> Result<Self, GatewayError> {
        law.validate()?;
        let canonical = serde_json::to_string(&law).map_err(|e| GatewayError::InvalidLaw(e.to_string()))?;
        let id = format!("scripted:{}", &crate::sha256_hex(canonical)[..12]);
        Ok(Self { law, id })
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        Self::new(serde_json::from_str(text).map_err(|e| GatewayError::InvalidLaw(e.to_string()))?)
    }

    pub fn law(&self) -> &ScriptedLaw {
        &self.law
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let state = extract_state(&request.prompt);
        let weights = self.law.weights_for(state);
        // Keyed by trial, not by state: two states at the same trial index
        // share their uniforms, so a context-blind law answers identically.
        let mut rng = SeedStream::new(self.law.seed)
            .child("scripted")
            .index(request.tag.seed)
            .index(request.tag.trial)
            .index(u64::from(request.tag.attempt))
            .rng();
        let picks = ScriptedLaw::draw(&weights, self.law.k, &mut rng);
        Ok(serde_json::json!({ "strategies": picks }).to_string())
    }
}

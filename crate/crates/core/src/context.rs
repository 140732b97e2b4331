//! Rendering learner profiles into natural-language learning contexts.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Backend, CompletionRequest, RequestTag};
use crate::psychometric::{ConstructSpec, ItemSpec, LearnerProfile, PsychometricModel};
use crate::seed::SeedStream;

static NULL_CATALOG: &str = include_str!("../assets/null_characteristics.json");

pub const ARCHIVE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("learning objective is empty")]
    EmptyObjective,
    #[error("unknown construct `{0}`")]
    UnknownConstruct(String),
    #[error("profile `{profile}` has no score for construct `{construct}`")]
    MissingScore { profile: String, construct: String },
    #[error("duplicate characteristic text: {0:?}")]
    DuplicateCharacteristic(String),
    #[error("characteristic index {index} out of range for a context with {len} characteristics")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("score must be finite, got {0}")]
    NonFiniteScore(f64),
    #[error("context archive line {line}: unsupported schema_version {found}")]
    ArchiveVersion { line: usize, found: u32 },
    #[error("context archive line {line}: {source}")]
    Archive { line: usize, source: serde_json::Error },
    #[error("context archive: {0}")]
    Io(#[from] std::io::Error),
}

/// Five intensity bands of a construct score, cut at
/// `mean + {-1.5, -0.5, 0.5, 1.5} * sd`. Each cut point belongs to the band
/// above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    VeryLow,
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl Band {
    pub fn from_score(score: f64, mean: f64, sd: f64) -> Self {
        let z = (score - mean) / sd;
        if z < -1.5 {
            Band::VeryLow
        } else if z < -0.5 {
            Band::Low
        } else if z < 0.5 {
            Band::Moderate
        } else if z < 1.5 {
            Band::High
        } else {
            Band::VeryHigh
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Band::VeryLow => "very low",
            Band::Low => "low",
            Band::Moderate => "moderate",
            Band::High => "high",
            Band::VeryHigh => "very high",
        }
    }

    pub fn frequency_adverb(self) -> &'static str {
        match self {
            Band::VeryLow => "rarely",
            Band::Low => "occasionally",
            Band::Moderate => "sometimes",
            Band::High => "often",
            Band::VeryHigh => "frequently",
        }
    }

    pub fn intensity_adverb(self) -> &'static str {
        match self {
            Band::VeryLow => "slightly",
            Band::Low => "somewhat",
            Band::Moderate => "moderately",
            Band::High => "considerably",
            Band::VeryHigh => "strongly",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CharacteristicSource {
    Construct { construct_id: String, source_item_id: String, score: f64 },
    Null { null_id: String },
}

/// One sentence-level observation about a learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characteristic {
    pub text: String,
    #[serde(flatten)]
    pub source: CharacteristicSource,
}

impl Characteristic {
    /// Key used to look the characteristic up in expert annotations: the
    /// construct id, or the null id for distractors.
    pub fn reference_key(&self) -> &str {
        match &self.source {
            CharacteristicSource::Construct { construct_id, .. } => construct_id,
            CharacteristicSource::Null { null_id } => null_id,
        }
    }

    pub fn construct_id(&self) -> Option<&str> {
        match &self.source {
            CharacteristicSource::Construct { construct_id, .. } => Some(construct_id),
            CharacteristicSource::Null { .. } => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self.source, CharacteristicSource::Null { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullCharacteristic {
    pub id: String,
    pub text: String,
}

impl NullCharacteristic {
    /// The bundled catalog of eight pedagogically irrelevant facts.
    pub fn catalog() -> Vec<NullCharacteristic> {
        #[derive(Deserialize)]
        struct Catalog {
            nulls: Vec<NullCharacteristic>,
        }
        serde_json::from_str::<Catalog>(NULL_CATALOG).expect("bundled null catalog is valid").nulls
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextProvenance {
    pub profile_id: Option<String>,
    pub renderer: String,
    pub seed: u64,
}

/// Ordered characteristics plus one learning objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningContext {
    pub context_id: String,
    pub characteristics: Vec<Characteristic>,
    pub objective: String,
    pub provenance: ContextProvenance,
}

impl LearningContext {
    /// The context with characteristic `index` removed.
    pub fn omit_characteristic(&self, index: usize) -> Result<LearningContext, ContextError> {
        if index >= self.characteristics.len() {
            return Err(ContextError::IndexOutOfRange { index, len: self.characteristics.len() });
        }
        let mut out = self.clone();
        out.characteristics.remove(index);
        out.context_id = format!("{}:-{index}", self.context_id);
        Ok(out)
    }

    /// Text sent to a model: one `- ` line per characteristic, then the
    /// objective.
    pub fn render_state(&self) -> String {
        render_state(self.characteristics.iter().map(|c| c.text.as_str()), &self.objective)
    }
}

pub(crate) fn render_state<'a>(characteristics: impl Iterator<Item = &'a str>, objective: &str) -> String {
    let mut out = String::new();
    for c in characteristics {
        out.push_str("- ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str("Learning objective: ");
    out.push_str(objective);
    out
}

/// Marker item per construct: the item with the highest loading, earliest in
/// model order on ties.
pub fn select_marker_items(model: &PsychometricModel) -> BTreeMap<String, String> {
    let mut best: BTreeMap<&str, &ItemSpec> = BTreeMap::new();
    for item in model.items() {
        match best.get(item.construct.as_str()) {
            Some(cur) if item.loading > cur.loading => {
                best.insert(&item.construct, item);
            }
            Some(cur) if item.loading == cur.loading => {
                info!(
                    "construct `{}`: items `{}` and `{}` tie at loading {}; keeping `{}`",
                    item.construct, cur.id, item.id, item.loading, cur.id
                );
            }
            Some(_) => {}
            None => {
                best.insert(&item.construct, item);
            }
        }
    }
    best.into_iter().map(|(c, i)| (c.to_string(), i.id.clone())).collect()
}

/// How characteristic sentences are produced.
#[derive(Clone, Default)]
pub enum Renderer {
    /// Deterministic first-to-third-person rewrite with a band adverb.
    #[default]
    Template,
    /// Asks a model backend to rephrase; falls back to the template.
    Llm(LlmRenderer),
}

impl Renderer {
    pub fn id(&self) -> String {
        match self {
            Renderer::Template => "template-v1".to_string(),
            Renderer::Llm(r) => format!("llm:{}", r.backend.id()),
        }
    }
}

#[derive(Clone)]
pub struct LlmRenderer {
    pub backend: Arc<dyn Backend>,
    pub retries: u32,
    pub seed: u64,
}

impl LlmRenderer {
    fn prompt(item: &ItemSpec, band: Band) -> String {
        format!(
            "Rephrase the questionnaire statement below as a single-sentence observation about a learner, \
             written in the third person and starting with \"The learner\".\n\
             The learner's level of agreement with the statement is: {}.\n\
             Convey that level qualitatively. Do not use numbers. Do not add any information \
             that is not already in the statement.\n\n\
             Statement: {}\n",
            band.label(),
            item.statement
        )
    }

    fn render(&self, item: &ItemSpec, band: Band) -> Option<String> {
        let prompt = Self::prompt(item, band);
        for attempt in 0..=self.retries {
            let request = CompletionRequest::new(
                prompt.clone(),
                self.backend.id(),
                RequestTag { state_ref: format!("render:{}", item.id), seed: self.seed, trial: 0, attempt },
            );
            match self.backend.complete(&request) {
                Ok(text) => {
                    let line = text.trim();
                    if !line.is_empty() && !line.contains('\n') && !line.chars().any(|c| c.is_ascii_digit()) {
                        return Some(line.to_string());
                    }
                    warn!("renderer response for `{}` rejected: {line:?}", item.id);
                }
                Err(e) => warn!("renderer call for `{}` failed: {e}", item.id),
            }
        }
        None
    }
}

/// Renders one marker item at the intensity band of `score`.
pub fn render_characteristic(
    item: &ItemSpec,
    construct: &ConstructSpec,
    score: f64,
    renderer: &Renderer,
) -> Result<Characteristic, ContextError> {
    if !score.is_finite() {
        return Err(ContextError::NonFiniteScore(score));
    }
    let band = Band::from_score(score, construct.mean, construct.sd);
    let text = match renderer {
        Renderer::Template => template_sentence(&item.statement, band),
        Renderer::Llm(r) => r.render(item, band).unwrap_or_else(|| {
            warn!("falling back to template rendering for `{}`", item.id);
            template_sentence(&item.statement, band)
        }),
    };
    Ok(Characteristic {
        text,
        source: CharacteristicSource::Construct {
            construct_id: construct.id.clone(),
            source_item_id: item.id.clone(),
            score,
        },
    })
}

const INTENSITY_VERBS: &[&str] = &[
    "believe", "think", "like", "prefer", "want", "expect", "enjoy", "value", "consider", "find", "feel", "care",
];

const NON_LEXICAL: &[&str] = &[
    "am", "was", "can", "could", "will", "would", "should", "must", "may", "might", "shall", "do", "don't", "did",
    "didn't", "often", "usually", "always", "sometimes", "rarely", "never", "really", "just", "also",
];

/// Rewrites a first-person item statement as a third-person observation.
///
/// `I <verb> ...` becomes `The learner <adverb> <verb>s ...`; any other shape
/// becomes `The learner <adverb> agrees that ...`. Belief and preference
/// verbs take the intensity adverb, everything else the frequency adverb.
pub fn template_sentence(statement: &str, band: Band) -> String {
    let body = statement.trim().trim_end_matches('.').trim();
    let words: Vec<&str> = body.split_whitespace().collect();
    let lexical = words.len() >= 2
        && words[0] == "I"
        && words[1].chars().all(|c| c.is_ascii_alphabetic())
        && !NON_LEXICAL.contains(&words[1].to_ascii_lowercase().as_str())
        && !words[1].ends_with("ly");
    let sentence = if lexical {
        let verb = words[1].to_ascii_lowercase();
        let adverb = if INTENSITY_VERBS.contains(&verb.as_str()) {
            band.intensity_adverb()
        } else {
            band.frequency_adverb()
        };
        let rest = swap_pronouns(&words[2..]);
        if rest.is_empty() {
            format!("The learner {adverb} {}", third_person(&verb))
        } else {
            format!("The learner {adverb} {} {rest}", third_person(&verb))
        }
    } else {
        let mut clause = swap_pronouns(&words);
        // lower-case the opening word unless it looks like an acronym
        let mut chars = clause.chars();
        if let (Some(first), second) = (chars.next(), chars.next()) {
            if first.is_ascii_uppercase() && !second.is_some_and(|c| c.is_ascii_uppercase()) {
                clause.replace_range(0..1, &first.to_ascii_lowercase().to_string());
            }
        }
        format!("The learner {} agrees that {clause}", band.intensity_adverb())
    };
    format!("{sentence}.")
}

fn third_person(verb: &str) -> String {
    match verb {
        "have" => "has".into(),
        "do" => "does".into(),
        "go" => "goes".into(),
        _ => {
            let bytes = verb.as_bytes();
            let n = bytes.len();
            if n >= 2 && bytes[n - 1] == b'y' && !b"aeiou".contains(&bytes[n - 2]) {
                format!("{}ies", &verb[..n - 1])
            } else if ["s", "sh", "ch", "x", "z", "o"].iter().any(|s| verb.ends_with(s)) {
                format!("{verb}es")
            } else {
                format!("{verb}s")
            }
        }
    }
}

fn swap_pronouns(words: &[&str]) -> String {
    let mut out: Vec<String> = Vec::with_capacity(words.len());
    let mut prev_was_i = false;
    for w in words {
        let split = w.find(|c: char| !(c.is_alphanumeric() || c == '\'')).unwrap_or(w.len());
        let (core, punct) = w.split_at(split);
        let swapped = match core {
            "I" => Some("they"),
            "I'm" => Some("they're"),
            "I've" => Some("they've"),
            "I'd" => Some("they'd"),
            "I'll" => Some("they'll"),
            "my" => Some("their"),
            "My" => Some("Their"),
            "me" => Some("them"),
            "myself" => Some("themselves"),
            "mine" => Some("theirs"),
            "am" if prev_was_i => Some("are"),
            "was" if prev_was_i => Some("were"),
            _ => None,
        };
        prev_was_i = core == "I";
        out.push(match swapped {
            Some(s) => format!("{s}{punct}"),
            None => (*w).to_string(),
        });
    }
    out.join(" ")
}

/// Options for [`assemble_context`].
#[derive(Clone, Default)]
pub struct AssembleOptions<'a> {
    /// Constructs to include; `None` means all of them.
    pub selected_constructs: Option<&'a [String]>,
    pub nulls: &'a [NullCharacteristic],
    pub seed: u64,
    pub renderer: Renderer,
    /// Overrides the default `ctx-<profile_id>` identifier.
    pub context_id: Option<String>,
}

/// Builds a learning context from a profile: one rendered marker item per
/// selected construct in model order, nulls interleaved at seeded positions,
/// objective last.
pub fn assemble_context(
    profile: &LearnerProfile,
    model: &PsychometricModel,
    objective: &str,
    opts: &AssembleOptions<'_>,
) -> Result<LearningContext, ContextError> {
    let objective = objective.trim();
    if objective.is_empty() {
        return Err(ContextError::EmptyObjective);
    }
    let selected: Option<HashSet<&str>> = match opts.selected_constructs {
        Some(ids) => {
            for id in ids {
                if model.construct(id).is_none() {
                    return Err(ContextError::UnknownConstruct(id.clone()));
                }
            }
            Some(ids.iter().map(String::as_str).collect())
        }
        None => None,
    };

    let markers = select_marker_items(model);
    let mut rendered = Vec::new();
    for c in model.constructs() {
        if selected.as_ref().is_some_and(|s| !s.contains(c.id.as_str())) {
            continue;
        }
        let score = *profile.construct_scores.get(&c.id).ok_or_else(|| ContextError::MissingScore {
            profile: profile.profile_id.clone(),
            construct: c.id.clone(),
        })?;
        let item = model.item(&markers[&c.id]).expect("marker item exists");
        rendered.push(render_characteristic(item, c, score, &opts.renderer)?);
    }

    let mut seen: HashSet<&str> = HashSet::new();
    for n in opts.nulls {
        if !seen.insert(n.text.as_str()) {
            return Err(ContextError::DuplicateCharacteristic(n.text.clone()));
        }
    }

    let mut slots: Vec<bool> = std::iter::repeat_n(false, rendered.len())
        .chain(std::iter::repeat_n(true, opts.nulls.len()))
        .collect();
    if !opts.nulls.is_empty() {
        slots.shuffle(&mut SeedStream::new(opts.seed).child("interleave").rng());
    }
    let mut constructs = rendered.into_iter();
    let mut nulls = opts.nulls.iter();
    let characteristics: Vec<Characteristic> = slots
        .into_iter()
        .map(|is_null| {
            if is_null {
                let n = nulls.next().expect("slot count matches");
                Characteristic { text: n.text.clone(), source: CharacteristicSource::Null { null_id: n.id.clone() } }
            } else {
                constructs.next().expect("slot count matches")
            }
        })
        .collect();

    let mut texts = HashSet::new();
    for c in &characteristics {
        if !texts.insert(c.text.as_str()) {
            return Err(ContextError::DuplicateCharacteristic(c.text.clone()));
        }
    }

    Ok(LearningContext {
        context_id: opts.context_id.clone().unwrap_or_else(|| format!("ctx-{}", profile.profile_id)),
        characteristics,
        objective: objective.to_string(),
        provenance: ContextProvenance {
            profile_id: Some(profile.profile_id.clone()),
            renderer: opts.renderer.id(),
            seed: opts.seed,
        },
    })
}

/// One line of the context archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub schema_version: u32,
    pub profile: LearnerProfile,
    pub context: LearningContext,
}

impl ArchiveRecord {
    pub fn new(profile: LearnerProfile, context: LearningContext) -> Self {
        Self { schema_version: ARCHIVE_SCHEMA_VERSION, profile, context }
    }
}

/// Writes records as JSON Lines.
pub fn write_archive(mut w: impl Write, records: &[ArchiveRecord]) -> Result<(), ContextError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|source| ContextError::Archive { line: 0, source })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_archive(r: impl BufRead) -> Result<Vec<ArchiveRecord>, ContextError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ArchiveRecord =
            serde_json::from_str(&line).map_err(|source| ContextError::Archive { line: i + 1, source })?;
        if record.schema_version != ARCHIVE_SCHEMA_VERSION {
            return Err(ContextError::ArchiveVersion { line: i + 1, found: record.schema_version });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_archive_file(path: &Path) -> Result<Vec<ArchiveRecord>, ContextError> {
    read_archive(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mean: f64, sd: f64) -> ConstructSpec {
        ConstructSpec { id: "se".into(), name: "Self-Efficacy".into(), mean, sd }
    }

    fn item(statement: &str) -> ItemSpec {
        ItemSpec { id: "i".into(), construct: "se".into(), loading: 0.8, statement: statement.into() }
    }

    #[test]
    fn band_cuts() {
        assert_eq!(Band::from_score(5.0 + 2.0, 5.0, 1.0), Band::VeryHigh);
        assert_eq!(Band::from_score(6.5, 5.0, 1.0), Band::VeryHigh);
        assert_eq!(Band::from_score(6.49, 5.0, 1.0), Band::High);
        assert_eq!(Band::from_score(5.0, 5.0, 1.0), Band::Moderate);
        assert_eq!(Band::from_score(4.5, 5.0, 1.0), Band::Moderate);
        assert_eq!(Band::from_score(4.49, 5.0, 1.0), Band::Low);
        assert_eq!(Band::from_score(3.0, 5.0, 1.0), Band::VeryLow);
    }

    #[test]
    fn top_band_belief() {
        let c = spec(5.0, 1.0);
        let ch = render_characteristic(&item("I believe I will receive an excellent grade"), &c, 7.0, &Renderer::Template)
            .unwrap();
        assert_eq!(ch.text, "The learner strongly believes they will receive an excellent grade.");
    }

    #[test]
    fn middle_band_belief() {
        let c = spec(5.0, 1.0);
        let ch = render_characteristic(&item("I believe I will receive an excellent grade"), &c, 5.0, &Renderer::Template)
            .unwrap();
        assert_eq!(ch.text, "The learner moderately believes they will receive an excellent grade.");
    }

    #[test]
    fn high_anxiety_reads_like_an_observation() {
        let s = template_sentence("I have an uneasy, upset feeling when I take an exam.", Band::VeryHigh);
        assert_eq!(s, "The learner frequently has an uneasy, upset feeling when they take an exam.");
    }

    #[test]
    fn liking_uses_intensity() {
        let s = template_sentence("I like the subject matter of this course.", Band::Moderate);
        assert_eq!(s, "The learner moderately likes the subject matter of this course.");
    }

    #[test]
    fn non_subject_initial_statement_uses_agreement_frame() {
        let s = template_sentence(
            "Even when course materials are dull and uninteresting, I manage to keep working until I finish.",
            Band::Low,
        );
        assert_eq!(
            s,
            "The learner somewhat agrees that even when course materials are dull and uninteresting, they manage to keep working until they finish."
        );
        let s = template_sentence("I'm confident I can understand the basic concepts taught in this course.", Band::High);
        assert!(s.starts_with("The learner considerably agrees that they're confident they can"), "{s}");
        let s = template_sentence("If I try hard enough, then I will understand the course material.", Band::Moderate);
        assert!(s.contains("agrees that if they try hard enough"), "{s}");
    }

    #[test]
    fn conjugation() {
        assert_eq!(third_person("try"), "tries");
        assert_eq!(third_person("ask"), "asks");
        assert_eq!(third_person("pray"), "prays");
        assert_eq!(third_person("watch"), "watches");
        assert_eq!(third_person("have"), "has");
    }

    #[test]
    fn no_digits_in_rendered_characteristics() {
        let model = PsychometricModel::mslq();
        for c in model.constructs() {
            for item in model.items().iter().filter(|i| i.construct == c.id) {
                for k in -4..=4 {
                    let score = c.mean + k as f64 * 0.5 * c.sd;
                    let ch = render_characteristic(item, c, score, &Renderer::Template).unwrap();
                    assert!(!ch.text.chars().any(|ch| ch.is_ascii_digit()), "{}", ch.text);
                    assert!(ch.text.starts_with("The learner "));
                }
            }
        }
    }

    #[test]
    fn archive_version_is_checked() {
        let m = PsychometricModel::mslq();
        let profile = m.generate_profile(1, 0);
        let ctx = assemble_context(&profile, &m, "o", &AssembleOptions::default()).unwrap();
        let mut record = ArchiveRecord::new(profile, ctx);
        record.schema_version = 9;
        let mut buf = Vec::new();
        write_archive(&mut buf, &[record]).unwrap();
        assert!(matches!(read_archive(buf.as_slice()), Err(ContextError::ArchiveVersion { line: 1, found: 9 })));
    }

    #[test]
    fn non_finite_score_rejected() {
        let c = spec(5.0, 1.0);
        assert!(render_characteristic(&item("I try."), &c, f64::NAN, &Renderer::Template).is_err());
    }

    fn tie_model() -> PsychometricModel {
        let text = r#"{"schema_version":1,
            "constructs":[{"id":"a","name":"A","mean":4,"sd":1},{"id":"b","name":"B","mean":4,"sd":1}],
            "correlation":[[1,0],[0,1]],
            "items":[
              {"id":"a1","construct":"a","loading":0.6,"statement":"I do a."},
              {"id":"a2","construct":"a","loading":0.9,"statement":"I do a well."},
              {"id":"b1","construct":"b","loading":0.8,"statement":"I do b."},
              {"id":"b2","construct":"b","loading":0.8,"statement":"I do b well."}],
            "likert_bounds":[1,7]}"#;
        PsychometricModel::from_json(text).unwrap()
    }

    #[test]
    fn marker_items() {
        let m = select_marker_items(&tie_model());
        assert_eq!(m["a"], "a2");
        assert_eq!(m["b"], "b1");
        let mslq = select_marker_items(&PsychometricModel::mslq());
        assert_eq!(mslq["self_efficacy"], "SE_05");
        assert_eq!(mslq["peer_learning"], "PL_50");
    }

    #[test]
    fn control_context_has_only_objective() {
        let model = PsychometricModel::mslq();
        let p = model.generate_profile(1, 0);
        let none: Vec<String> = vec![];
        let ctx = assemble_context(
            &p,
            &model,
            "The learner wants to learn limits.",
            &AssembleOptions { selected_constructs: Some(&none), ..Default::default() },
        )
        .unwrap();
        assert!(ctx.characteristics.is_empty());
        assert_eq!(ctx.render_state(), "Learning objective: The learner wants to learn limits.");
    }

    #[test]
    fn duplicate_null_rejected() {
        let model = PsychometricModel::mslq();
        let p = model.generate_profile(1, 0);
        let n = NullCharacteristic { id: "x".into(), text: "The learner has a dog.".into() };
        let nulls = vec![n.clone(), NullCharacteristic { id: "y".into(), ..n }];
        let err = assemble_context(&p, &model, "obj", &AssembleOptions { nulls: &nulls, ..Default::default() });
        assert!(matches!(err, Err(ContextError::DuplicateCharacteristic(_))));
    }

    #[test]
    fn unknown_construct_and_empty_objective() {
        let model = PsychometricModel::mslq();
        let p = model.generate_profile(1, 0);
        let sel = vec!["nope".to_string()];
        assert!(matches!(
            assemble_context(&p, &model, "obj", &AssembleOptions { selected_constructs: Some(&sel), ..Default::default() }),
            Err(ContextError::UnknownConstruct(_))
        ));
        assert!(matches!(
            assemble_context(&p, &model, "  ", &AssembleOptions::default()),
            Err(ContextError::EmptyObjective)
        ));
    }

    #[test]
    fn omit_out_of_range() {
        let model = PsychometricModel::mslq();
        let p = model.generate_profile(1, 0);
        let ctx = assemble_context(&p, &model, "obj", &AssembleOptions::default()).unwrap();
        assert!(ctx.omit_characteristic(15).is_err());
        assert_eq!(ctx.omit_characteristic(14).unwrap().context_id, "ctx-learner-0000:-14");
    }

    #[test]
    fn null_catalog_has_eight_distinct_entries() {
        let cat = NullCharacteristic::catalog();
        assert_eq!(cat.len(), 8);
        let texts: HashSet<_> = cat.iter().map(|n| &n.text).collect();
        assert_eq!(texts.len(), 8);
    }
}

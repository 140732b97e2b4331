//! Measure and diagnose how learning context changes a language model's
//! instructional-design policy.
//!
//! The crate is organised as a pipeline:
//!
//! * [`psychometric`] samples latent construct scores and questionnaire item
//!   responses from published scale statistics.
//! * [`context`] renders a sampled profile into a natural-language learning
//!   context and builds leave-one-out variants of it.
//! * [`policy`] prompts a model backend for its top-k strategies and turns
//!   repeated selections into an empirical policy.
//! * [`gateway`] provides the backends: a chat-completion HTTP client, a
//!   seeded scripted backend for tests, and a record/replay cache.
//! * [`expert`] ingests expert annotations and derives the reference signals.
//! * [`metrics`] computes deviation, learner-centeredness, influence,
//!   quadrant labels, and rank correlation.
//! * [`runner`] wires everything into the `generate`, `estimate`, `compare`,
//!   `ablate`, and `report` commands.

pub mod context;
pub mod error;
pub mod expert;
pub mod gateway;
pub mod metrics;
pub mod policy;
pub mod psychometric;
pub mod runner;
pub mod seed;

pub use context::{Characteristic, CharacteristicSource, LearningContext, NullCharacteristic, Renderer};
pub use error::{Error, Result};
pub use expert::{ExpertAnnotations, ExpertReference};
pub use gateway::{Backend, CompletionRequest, HttpBackend, ReplayBackend, ScriptedBackend, ScriptedLaw};
pub use metrics::{InfluenceRecord, Quadrant};
pub use policy::{ActionSpace, Policy, PolicyEngine, PolicyEstimate, PolicyState};
pub use psychometric::{LearnerProfile, PsychometricModel};
pub use seed::SeedStream;

pub(crate) fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes.as_ref()))
}

//! Profile corruption, clarifying-question sessions and reconstruction
//! metrics.
//!
//! A [`StructuredProfile`] is turned into supervised training rows by
//! [`forward::run_forward`], and reconstructed question by question by
//! [`session::run_session`]. [`metrics::evaluate_run`] scores the result.

pub mod backends;
pub mod forward;
pub mod jsonl;
pub mod metrics;
pub mod profile;
pub mod session;
pub mod synth;

pub use backends::{
    AnswerInterpreter, AnswerResult, Answerer, BackendError, QuestionGenerator, Questioner, Ranker,
    Structurer,
};
pub use forward::{
    ForwardArtifacts, ForwardBackends, ForwardConfig, ForwardError, SimulatorExample, TagRanking,
    TrainingExample,
};
pub use metrics::{evaluate_run, MetricsError, MetricsReport};
pub use profile::{
    normalize, profiles_equal, Entry, PartialProfile, ProfileView, QaPair, StructuredProfile,
    UpdateMode, NO_PREFERENCE,
};
pub use session::{
    run_batch, run_session, Session, SessionConfig, SessionError, Termination, Transcript,
};
pub use synth::{synth_profiles, SyntheticProfileSpec};

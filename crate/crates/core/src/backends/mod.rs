//! Pluggable providers for every step that needs judgement: structuring raw
//! text, ranking tags, writing funnel questions, asking the next question in
//! a live session, and answering (or interpreting answers to) a question.
//!
//! Each role has a rule-based oracle in [`oracle`] and an LLM-backed
//! implementation in [`llm`]. LLM output is validated against the same
//! invariants as oracle output before it is handed back.

pub mod llm;
pub mod oracle;
pub mod parse;
pub mod prompts;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::TagRanking;
use crate::profile::{
    normalize, Entry, PartialProfile, ProfileError, QaPair, StructuredProfile, NO_PREFERENCE,
};

pub use llm::{llm_complete, BackendConfig, Completion, HttpCompletion, LlmError};
pub use oracle::{
    oracle_answer, oracle_generate_question, oracle_structure, template_question, OracleAnswerer,
    OracleInterpreter, OracleQuestionGenerator, OracleQuestioner, OracleRanker, OracleStructurer,
    RandomTemplateQuestioner, GENERALITY_LEXICON,
};
pub use parse::{parse_structured_response, ParseError};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid {what} from backend: {detail}")]
    Invalid {
        what: &'static str,
        detail: String,
        raw: String,
    },
    #[error("no `tag: content` lines could be extracted")]
    EmptyExtraction,
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("every tag of the profile is already known")]
    NoAbsentTags,
    #[error("cannot map the answer to `{question}` onto a profile tag")]
    Unmappable { question: String },
    #[error("unknown prompt template set `{0}`")]
    UnknownTemplate(String),
}

/// An answer together with the profile entries it reveals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub answer_text: String,
    pub addressed: Vec<Entry>,
    pub is_no_preference: bool,
}

impl AnswerResult {
    pub fn no_preference() -> Self {
        Self {
            answer_text: NO_PREFERENCE.to_string(),
            addressed: Vec::new(),
            is_no_preference: true,
        }
    }

    /// Builds a result from raw backend output. "I don't know" style replies
    /// and replies that address nothing collapse to the no-preference
    /// sentinel.
    pub fn from_raw(answer_text: &str, addressed: Vec<Entry>) -> Self {
        if addressed.is_empty() || is_no_preference_text(answer_text) {
            return Self::no_preference();
        }
        Self {
            answer_text: answer_text.trim().to_string(),
            addressed,
            is_no_preference: false,
        }
    }

    pub fn into_qa(self, question: &str, position: usize) -> QaPair {
        QaPair::new(question, self.answer_text, self.addressed, position)
    }
}

/// Recognizes the ways a user or simulator says it has no preference.
pub fn is_no_preference_text(text: &str) -> bool {
    let norm = normalize(text);
    let norm = norm.trim_end_matches(['.', '!']).replace('’', "'");
    matches!(
        norm.as_str(),
        "" | "no preference"
            | "i don't know"
            | "i dont know"
            | "i do not know"
            | "don't know"
            | "idk"
            | "no idea"
    )
}

/// Turns raw text into a structured profile.
pub trait Structurer: Send + Sync {
    fn structure(&self, text: &str, source_id: &str) -> Result<StructuredProfile, BackendError>;
}

/// Orders a profile's tags from most general to most specific.
pub trait Ranker: Send + Sync {
    fn rank(&self, profile: &StructuredProfile) -> Result<TagRanking, BackendError>;
}

/// Writes the funnel question sequence for a ranked profile.
pub trait QuestionGenerator: Send + Sync {
    fn generate(
        &self,
        profile: &StructuredProfile,
        ranking: &TagRanking,
    ) -> Result<Vec<QaPair>, BackendError>;
}

/// Per-turn inputs handed to a [`Questioner`].
///
/// `target` is only meant for oracle policies; model-backed questioners
/// must work from `state` alone.
pub struct TurnContext<'a> {
    pub state: &'a PartialProfile,
    pub target: &'a StructuredProfile,
    pub turn: usize,
    pub rng: &'a mut ChaCha8Rng,
}

/// Picks the next clarifying question during a session.
pub trait Questioner: Send + Sync {
    fn next_question(&self, ctx: &mut TurnContext<'_>) -> Result<String, BackendError>;
}

/// Answers a question on behalf of a user whose profile is known.
pub trait Answerer: Send + Sync {
    fn answer(&self, question: &str, profile: &StructuredProfile)
        -> Result<AnswerResult, BackendError>;
}

/// Maps a human reply onto profile entries.
pub trait AnswerInterpreter: Send + Sync {
    fn interpret(
        &self,
        question: &str,
        reply: &str,
        known_tags: &[&str],
    ) -> Result<AnswerResult, BackendError>;
}

/// A human reply wrapped as an [`Answerer`], so live sessions go through the
/// same engine path as simulated ones.
pub struct HumanAnswerer<'a> {
    pub reply: &'a str,
    pub no_preference: bool,
    pub interpreter: &'a dyn AnswerInterpreter,
}

impl Answerer for HumanAnswerer<'_> {
    fn answer(
        &self,
        question: &str,
        profile: &StructuredProfile,
    ) -> Result<AnswerResult, BackendError> {
        if self.no_preference || is_no_preference_text(self.reply) {
            return Ok(AnswerResult::no_preference());
        }
        let tags = profile.tags().collect::<Vec<_>>();
        self.interpreter.interpret(question, self.reply, &tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_preference_variants() {
        for s in ["I don't know", "i dont know.", "No Preference", "  ", "I don’t know"] {
            assert!(is_no_preference_text(s), "{s}");
        }
        assert!(!is_no_preference_text("yes"));
    }

    #[test]
    fn from_raw_normalizes_sentinel() {
        let r = AnswerResult::from_raw("I don't know", vec![Entry::new("Genre", "x")]);
        assert_eq!(r, AnswerResult::no_preference());
        let r = AnswerResult::from_raw("yes", vec![]);
        assert!(r.is_no_preference && r.addressed.is_empty());
        let r = AnswerResult::from_raw(" yes ", vec![Entry::new("Genre", "x")]);
        assert!(!r.is_no_preference);
        assert_eq!(r.answer_text, "yes");
    }
}

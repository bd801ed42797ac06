//! Structured user profiles and the deterministic transition between
//! partial profiles.
//!
//! A [`StructuredProfile`] is an ordered list of `tag: content` entries. A
//! [`PartialProfile`] is a snapshot of what is known about a user at some
//! point of an elicitation session: the entries gathered so far plus the
//! question/answer history that produced them. Every transition returns a
//! new snapshot, so a whole chain of states can be kept around for dataset
//! emission or debugging.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel answer recorded when the user has no preference on a question.
pub const NO_PREFERENCE: &str = "No Preference";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfileError {
    #[error("entry {index} has an empty tag")]
    EmptyTag { index: usize },
    #[error("entry {index} (tag `{tag}`) has empty content")]
    EmptyContent { index: usize, tag: String },
    #[error("duplicate tag `{tag}`")]
    DuplicateTag { tag: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransitionError {
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("answer to `{question}` sets tag `{tag}` to `{new}` but it already holds `{existing}`")]
    ConflictingAnswer {
        question: String,
        tag: String,
        existing: String,
        new: String,
    },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Trim, case-fold and collapse internal whitespace runs.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// One `tag: content` pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entry {
    pub tag: String,
    pub content: String,
}

impl Entry {
    pub fn new(tag: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            content: content.into(),
        }
    }

    /// Normalized `(tag, content)` key used for set comparisons.
    pub fn key(&self) -> (String, String) {
        (normalize(&self.tag), normalize(&self.content))
    }

    pub fn tag_key(&self) -> String {
        normalize(&self.tag)
    }

    fn validate(&self, index: usize) -> Result<(), ProfileError> {
        if self.tag.trim().is_empty() {
            return Err(ProfileError::EmptyTag { index });
        }
        if self.content.trim().is_empty() {
            return Err(ProfileError::EmptyContent {
                index,
                tag: self.tag.clone(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.tag, self.content)
    }
}

fn validate_entries(entries: &[Entry]) -> Result<(), ProfileError> {
    let mut seen = HashSet::new();
    for (index, entry) in entries.iter().enumerate() {
        entry.validate(index)?;
        if !seen.insert(entry.tag_key()) {
            return Err(ProfileError::DuplicateTag {
                tag: entry.tag.clone(),
            });
        }
    }
    Ok(())
}

/// Anything that exposes an ordered list of profile entries.
pub trait ProfileView {
    fn entries(&self) -> &[Entry];

    fn is_empty(&self) -> bool {
        self.entries().is_empty()
    }

    fn len(&self) -> usize {
        self.entries().len()
    }

    fn get(&self, tag: &str) -> Option<&Entry> {
        let key = normalize(tag);
        self.entries().iter().find(|e| e.tag_key() == key)
    }

    fn contains_tag(&self, tag: &str) -> bool {
        self.get(tag).is_some()
    }
}

/// A complete structured profile. Entry order is significant: once ranked it
/// encodes generality, most general first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile")]
pub struct StructuredProfile {
    source_id: String,
    entries: Vec<Entry>,
}

#[derive(Deserialize)]
struct RawProfile {
    source_id: String,
    entries: Vec<Entry>,
}

impl TryFrom<RawProfile> for StructuredProfile {
    type Error = ProfileError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        StructuredProfile::new(raw.source_id, raw.entries)
    }
}

impl StructuredProfile {
    pub fn new(source_id: impl Into<String>, entries: Vec<Entry>) -> Result<Self, ProfileError> {
        validate_entries(&entries)?;
        Ok(Self {
            source_id: source_id.into(),
            entries,
        })
    }

    pub fn empty(source_id: impl Into<String>) -> Self {
        Self {
            source_id: source_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.tag.as_str())
    }

    /// Looks up the profile's own copy of an entry matching `entry` after
    /// normalization.
    pub fn find(&self, entry: &Entry) -> Option<&Entry> {
        let key = entry.key();
        self.entries.iter().find(|e| e.key() == key)
    }

    /// Returns a copy with entries reordered to follow `tags`.
    pub fn reordered(&self, tags: &[String]) -> Result<Self, ProfileError> {
        let entries = tags
            .iter()
            .filter_map(|t| self.get(t).cloned())
            .collect::<Vec<_>>();
        Self::new(self.source_id.clone(), entries)
    }
}

impl ProfileView for StructuredProfile {
    fn entries(&self) -> &[Entry] {
        &self.entries
    }
}

/// How a partial profile carries conversational history into prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Only answers are visible to the questioner.
    AnswersOnly,
    /// Questions and answers are both visible.
    #[default]
    QuestionsAndAnswers,
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateMode::AnswersOnly => "answers_only",
            UpdateMode::QuestionsAndAnswers => "questions_and_answers",
        })
    }
}

/// A question, its answer, and the profile entries the pair addresses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub addressed: Vec<Entry>,
    pub position: usize,
}

impl QaPair {
    pub fn new(
        question: impl Into<String>,
        answer: impl Into<String>,
        addressed: Vec<Entry>,
        position: usize,
    ) -> Self {
        let mut seen = HashSet::new();
        let addressed = addressed
            .into_iter()
            .filter(|e| seen.insert(e.key()))
            .collect();
        Self {
            question: question.into(),
            answer: answer.into(),
            addressed,
            position,
        }
    }

    /// A turn where the user had nothing to say.
    pub fn no_preference(question: impl Into<String>, position: usize) -> Self {
        Self::new(question, NO_PREFERENCE, Vec::new(), position)
    }

    pub fn is_no_preference(&self) -> bool {
        self.addressed.is_empty()
    }
}

/// Snapshot of a profile under reconstruction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartialProfile {
    pub entries: Vec<Entry>,
    pub history: Vec<QaPair>,
    pub mode: UpdateMode,
}

impl PartialProfile {
    pub fn empty(mode: UpdateMode) -> Self {
        Self {
            entries: Vec::new(),
            history: Vec::new(),
            mode,
        }
    }

    pub fn with_mode(mut self, mode: UpdateMode) -> Self {
        self.mode = mode;
        self
    }

    /// Questions the questioner is allowed to see. Empty in answers-only
    /// mode even though the history is retained.
    pub fn visible_questions(&self) -> Vec<&str> {
        match self.mode {
            UpdateMode::AnswersOnly => Vec::new(),
            UpdateMode::QuestionsAndAnswers => {
                self.history.iter().map(|qa| qa.question.as_str()).collect()
            }
        }
    }

    /// Adds `qa` to the history and unions its addressed entries into the
    /// profile. Fails if an addressed entry would overwrite an existing tag
    /// with different content.
    pub fn apply_transition(&self, qa: &QaPair) -> Result<PartialProfile, TransitionError> {
        if qa.question.trim().is_empty() {
            return Err(TransitionError::EmptyQuestion);
        }
        let mut entries = self.entries.clone();
        for entry in &qa.addressed {
            match entries.iter().find(|e| e.tag_key() == entry.tag_key()) {
                Some(existing) if existing.key() == entry.key() => {}
                Some(existing) => {
                    return Err(TransitionError::ConflictingAnswer {
                        question: qa.question.clone(),
                        tag: entry.tag.clone(),
                        existing: existing.content.clone(),
                        new: entry.content.clone(),
                    })
                }
                None => entries.push(entry.clone()),
            }
        }
        validate_entries(&entries)?;
        let mut history = self.history.clone();
        history.push(qa.clone());
        Ok(PartialProfile {
            entries,
            history,
            mode: self.mode,
        })
    }

    /// Entries as a structured profile carrying `source_id`.
    pub fn to_profile(&self, source_id: &str) -> StructuredProfile {
        StructuredProfile {
            source_id: source_id.to_string(),
            entries: self.entries.clone(),
        }
    }

    /// Text shown to a questioner. Answers-only mode lists the answers
    /// without the questions that produced them.
    pub fn render_for_prompt(&self) -> String {
        let mut out = String::from("Profile:\n");
        if self.entries.is_empty() {
            out.push_str("(empty)\n");
        } else {
            out.push_str(&flatten_profile(self));
            out.push('\n');
        }
        if !self.history.is_empty() {
            out.push_str("History:\n");
            for qa in &self.history {
                match self.mode {
                    UpdateMode::QuestionsAndAnswers => {
                        out.push_str(&format!("Q: {}\nA: {}\n", qa.question, qa.answer));
                    }
                    UpdateMode::AnswersOnly => {
                        out.push_str(&format!("A: {}\n", qa.answer));
                    }
                }
            }
        }
        out
    }
}

impl ProfileView for PartialProfile {
    fn entries(&self) -> &[Entry] {
        &self.entries
    }
}

/// One `tag: content` line per entry in stored order.
pub fn flatten_profile(p: &impl ProfileView) -> String {
    p.entries()
        .iter()
        .map(Entry::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Flattening with lines sorted, so that scoring is insensitive to order.
pub fn flatten_sorted(p: &impl ProfileView) -> String {
    let mut lines = p.entries().iter().map(Entry::to_string).collect::<Vec<_>>();
    lines.sort();
    lines.join("\n")
}

/// Normalized set of `(tag, content)` keys.
pub fn entry_keys(p: &impl ProfileView) -> HashSet<(String, String)> {
    p.entries().iter().map(Entry::key).collect()
}

/// Order-insensitive comparison of normalized `(tag, content)` sets.
pub fn profiles_equal(a: &impl ProfileView, b: &impl ProfileView) -> bool {
    entry_keys(a) == entry_keys(b)
}

//! Deterministic rule-based backends used for closed-loop tests and for
//! producing reference data without a model in the loop.

use std::cmp::Ordering;

use rand::seq::IndexedRandom;

use super::{
    AnswerInterpreter, AnswerResult, Answerer, BackendError, QuestionGenerator, Questioner,
    Ranker, Structurer, TurnContext,
};
use crate::forward::TagRanking;
use crate::profile::{
    normalize, Entry, PartialProfile, ProfileView, QaPair, StructuredProfile, UpdateMode,
};

/// Version of [`GENERALITY_LEXICON`]. Bump when the ordering changes.
pub const LEXICON_VERSION: u32 = 1;

/// Movie-domain concepts ordered from broad to specific.
pub const GENERALITY_LEXICON: [&str; 9] = [
    "Genre",
    "Film Era",
    "Decade",
    "Directors",
    "Visual Style",
    "Tone",
    "Special Effects",
    "Humor",
    "Atmosphere",
];

const TEMPLATE_PREFIX: &str = "What is your preferred ";

pub fn template_question(tag: &str) -> String {
    format!("{TEMPLATE_PREFIX}{tag}?")
}

/// Recovers the tag a question is about. Template questions carry it
/// verbatim; for anything else the longest candidate tag mentioned in the
/// question wins.
pub fn question_tag(question: &str, candidates: &[&str]) -> Option<String> {
    let q = question.trim();
    if let Some(tag) = q
        .strip_prefix(TEMPLATE_PREFIX)
        .and_then(|rest| rest.strip_suffix('?'))
    {
        return Some(tag.trim().to_string());
    }
    let norm_q = normalize(q);
    candidates
        .iter()
        .filter(|t| !t.trim().is_empty() && norm_q.contains(&normalize(t)))
        .max_by_key(|t| normalize(t).len())
        .map(|t| t.to_string())
}

/// Parses `tag: content` lines, skipping blank lines.
pub fn oracle_structure(text: &str, source_id: &str) -> Result<StructuredProfile, BackendError> {
    let entries = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| {
            let (tag, content) = l.split_once(':')?;
            let (tag, content) = (tag.trim(), content.trim());
            (!tag.is_empty() && !content.is_empty()).then(|| Entry::new(tag, content))
        })
        .collect::<Vec<_>>();
    if entries.is_empty() {
        return Err(BackendError::EmptyExtraction);
    }
    Ok(StructuredProfile::new(source_id, entries)?)
}

fn lexicon_rank(tag: &str) -> Option<usize> {
    let key = normalize(tag);
    GENERALITY_LEXICON.iter().position(|t| normalize(t) == key)
}

/// Sorts tags by lexicon position, unknown tags last, ties broken
/// lexicographically.
pub fn lexicon_order<'a>(tags: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut tags = tags.into_iter().collect::<Vec<_>>();
    tags.sort_by(|a, b| match (lexicon_rank(a), lexicon_rank(b)) {
        (Some(x), Some(y)) => x.cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    });
    tags.into_iter().map(str::to_string).collect()
}

/// Looks the question's tag up in the profile. Never invents content: the
/// answer is either the stored content or the no-preference sentinel.
pub fn oracle_answer(question: &str, full_profile: &StructuredProfile) -> AnswerResult {
    let tags = full_profile.tags().collect::<Vec<_>>();
    match question_tag(question, &tags).and_then(|t| full_profile.get(&t).cloned()) {
        Some(entry) => AnswerResult {
            answer_text: entry.content.clone(),
            addressed: vec![entry],
            is_no_preference: false,
        },
        None => AnswerResult::no_preference(),
    }
}

fn asked_tags(state: &PartialProfile, candidates: &[&str]) -> Vec<String> {
    state
        .visible_questions()
        .into_iter()
        .filter_map(|q| question_tag(q, candidates))
        .map(|t| normalize(&t))
        .collect()
}

/// Template question for the most general tag of `full` that `state` does
/// not hold yet. In questions-and-answers mode tags that were already asked
/// are skipped; if every missing tag was already asked the most general one
/// is asked again.
pub fn oracle_generate_question(
    state: &PartialProfile,
    full: &StructuredProfile,
    ranking: &TagRanking,
) -> Result<String, BackendError> {
    let absent = ranking
        .tags()
        .iter()
        .filter(|t| full.contains_tag(t) && !state.contains_tag(t))
        .collect::<Vec<_>>();
    let first = absent.first().ok_or(BackendError::NoAbsentTags)?;
    let tag = match state.mode {
        UpdateMode::AnswersOnly => first,
        UpdateMode::QuestionsAndAnswers => {
            let candidates = full.tags().collect::<Vec<_>>();
            let asked = asked_tags(state, &candidates);
            absent
                .iter()
                .find(|t| !asked.contains(&normalize(t)))
                .unwrap_or(first)
        }
    };
    Ok(template_question(tag))
}

pub struct OracleStructurer;

impl Structurer for OracleStructurer {
    fn structure(&self, text: &str, source_id: &str) -> Result<StructuredProfile, BackendError> {
        oracle_structure(text, source_id)
    }
}

pub struct OracleRanker;

impl Ranker for OracleRanker {
    fn rank(&self, profile: &StructuredProfile) -> Result<TagRanking, BackendError> {
        let order = lexicon_order(profile.tags());
        TagRanking::for_profile(profile, &order).map_err(|e| BackendError::Invalid {
            what: "ranking",
            detail: e.to_string(),
            raw: order.join(", "),
        })
    }
}

/// One template question per tag, in ranking order.
pub struct OracleQuestionGenerator;

impl QuestionGenerator for OracleQuestionGenerator {
    fn generate(
        &self,
        profile: &StructuredProfile,
        ranking: &TagRanking,
    ) -> Result<Vec<QaPair>, BackendError> {
        ranking
            .tags()
            .iter()
            .enumerate()
            .map(|(i, tag)| {
                let entry = profile.get(tag).ok_or_else(|| BackendError::Invalid {
                    what: "ranking",
                    detail: format!("tag `{tag}` is not in the profile"),
                    raw: tag.clone(),
                })?;
                Ok(QaPair::new(
                    template_question(&entry.tag),
                    entry.content.clone(),
                    vec![entry.clone()],
                    i,
                ))
            })
            .collect()
    }
}

/// Session questioner that peeks at the target and asks about its tags in
/// lexicon order.
pub struct OracleQuestioner;

impl Questioner for OracleQuestioner {
    fn next_question(&self, ctx: &mut TurnContext<'_>) -> Result<String, BackendError> {
        let ranking = OracleRanker.rank(ctx.target)?;
        oracle_generate_question(ctx.state, ctx.target, &ranking)
    }
}

/// Questioner that draws uniformly among the template questions of a fixed
/// vocabulary. When the question history is visible it skips tags it has
/// already asked about; in answers-only mode it sees no history and keeps
/// resampling the whole vocabulary, repeats included.
pub struct RandomTemplateQuestioner {
    pub vocabulary: Vec<String>,
}

impl Default for RandomTemplateQuestioner {
    fn default() -> Self {
        Self {
            vocabulary: GENERALITY_LEXICON.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Questioner for RandomTemplateQuestioner {
    fn next_question(&self, ctx: &mut TurnContext<'_>) -> Result<String, BackendError> {
        let vocab = self.vocabulary.iter().map(String::as_str).collect::<Vec<_>>();
        let asked = asked_tags(ctx.state, &vocab);
        let fresh = vocab
            .iter()
            .filter(|t| !asked.contains(&normalize(t)))
            .copied()
            .collect::<Vec<_>>();
        let pool = if fresh.is_empty() { &vocab } else { &fresh };
        pool.choose(ctx.rng)
            .map(|t| template_question(t))
            .ok_or(BackendError::NoAbsentTags)
    }
}

/// Simulated user that answers by exact profile lookup.
pub struct OracleAnswerer;

impl Answerer for OracleAnswerer {
    fn answer(
        &self,
        question: &str,
        profile: &StructuredProfile,
    ) -> Result<AnswerResult, BackendError> {
        Ok(oracle_answer(question, profile))
    }
}

/// Maps a human reply onto the tag named by the question; the reply text
/// becomes the entry content.
pub struct OracleInterpreter;

impl AnswerInterpreter for OracleInterpreter {
    fn interpret(
        &self,
        question: &str,
        reply: &str,
        known_tags: &[&str],
    ) -> Result<AnswerResult, BackendError> {
        if super::is_no_preference_text(reply) {
            return Ok(AnswerResult::no_preference());
        }
        let tag = question_tag(question, known_tags).ok_or_else(|| BackendError::Unmappable {
            question: question.to_string(),
        })?;
        let tag = known_tags
            .iter()
            .find(|t| normalize(t) == normalize(&tag))
            .map(|t| t.to_string())
            .unwrap_or(tag);
        Ok(AnswerResult::from_raw(reply, vec![Entry::new(tag, reply.trim())]))
    }
}

//! Forward process: turn a raw profile into a ranked structured profile,
//! generate funnel questions, and emit the training data obtained by
//! deleting answered information one question at a time.
//!
//! For a funnel `Q_0..Q_{n-1}` the corruption state at step `t` is the full
//! profile minus everything addressed by questions `t..n-1`, i.e. the
//! profile as it stood just before `Q_t` was asked. Step `n` is the full
//! profile and, with complete coverage, step `0` is empty.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, QuestionGenerator, Ranker, Structurer};
use crate::profile::{
    normalize, Entry, PartialProfile, ProfileView, QaPair, StructuredProfile, UpdateMode,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RankingError {
    #[error("ranking is missing tag `{0}`")]
    Missing(String),
    #[error("ranking contains tag `{0}` which is not in the profile")]
    Unknown(String),
    #[error("ranking lists tag `{0}` more than once")]
    Duplicate(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FunnelError {
    #[error("question at index {index} has position {position}")]
    Position { index: usize, position: usize },
    #[error("question {position} addresses no profile entry")]
    EmptyAddressed { position: usize },
    #[error("question {position} addresses `{entry}` which is not in the profile")]
    NotInProfile { position: usize, entry: String },
    #[error("no question addresses `{0}`")]
    CoverageGap(String),
    #[error("question {position} is more general than the question before it")]
    Order { position: usize },
    #[error("question {position} has empty text")]
    EmptyQuestion { position: usize },
}

#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("step {t} out of range 0..={n}")]
    StepOutOfRange { t: usize, n: usize },
    #[error("ranking invalid: {0}")]
    Ranking(#[from] RankingError),
    #[error("funnel invalid: {0}")]
    Funnel(#[from] FunnelError),
    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ForwardError>,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl ForwardError {
    fn at(self, stage: &'static str) -> Self {
        ForwardError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Profile tags ordered from most general to most specific.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagRanking(Vec<String>);

impl TagRanking {
    /// Checks that `order` is a permutation of the profile's tags and
    /// rewrites each tag with the profile's own spelling.
    pub fn for_profile(
        profile: &StructuredProfile,
        order: &[String],
    ) -> Result<Self, RankingError> {
        let mut seen = HashSet::new();
        let mut tags = Vec::with_capacity(order.len());
        for tag in order {
            let entry = profile
                .get(tag)
                .ok_or_else(|| RankingError::Unknown(tag.clone()))?;
            if !seen.insert(entry.tag_key()) {
                return Err(RankingError::Duplicate(tag.clone()));
            }
            tags.push(entry.tag.clone());
        }
        if let Some(missing) = profile.tags().find(|t| !seen.contains(&normalize(t))) {
            return Err(RankingError::Missing(missing.to_string()));
        }
        Ok(Self(tags))
    }

    pub fn tags(&self) -> &[String] {
        &self.0
    }

    pub fn rank_of(&self, tag: &str) -> Option<usize> {
        let key = normalize(tag);
        self.0.iter().position(|t| normalize(t) == key)
    }
}

/// One questioner training row: given the partial profile, produce
/// `target_question`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub source_id: String,
    pub step: usize,
    pub input_profile: StructuredProfile,
    pub history: Vec<QaPair>,
    pub mode: UpdateMode,
    pub target_question: String,
}

impl TrainingExample {
    pub fn input_state(&self) -> PartialProfile {
        PartialProfile {
            entries: self.input_profile.entries().to_vec(),
            history: self.history.clone(),
            mode: self.mode,
        }
    }
}

/// One simulator training row: given the question and the full profile,
/// produce the answer and the entries it addresses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatorExample {
    pub source_id: String,
    pub question: String,
    pub full_profile: StructuredProfile,
    pub target_answer: String,
    pub target_addressed: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardArtifacts {
    pub profile: StructuredProfile,
    pub ranking: TagRanking,
    pub funnel: Vec<QaPair>,
    pub questioner_rows: Vec<TrainingExample>,
    pub simulator_rows: Vec<SimulatorExample>,
}

pub struct ForwardBackends<'a> {
    pub structurer: &'a dyn Structurer,
    pub ranker: &'a dyn Ranker,
    pub generator: &'a dyn QuestionGenerator,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ForwardConfig {
    #[serde(default)]
    pub mode: UpdateMode,
}

pub fn structure_profile(
    text: &str,
    source_id: &str,
    structurer: &dyn Structurer,
) -> Result<StructuredProfile, ForwardError> {
    if text.trim().is_empty() {
        return Err(ForwardError::EmptyInput);
    }
    let profile = structurer.structure(text, source_id)?;
    if profile.is_empty() {
        return Err(BackendError::EmptyExtraction.into());
    }
    Ok(profile)
}

pub fn rank_tags(
    profile: &StructuredProfile,
    ranker: &dyn Ranker,
) -> Result<TagRanking, ForwardError> {
    let ranking = ranker.rank(profile)?;
    // re-check regardless of backend
    Ok(TagRanking::for_profile(profile, ranking.tags())?)
}

/// Checks positions, grounding, full coverage, and funnel order (the most
/// general tag a question touches never moves back up the ranking).
pub fn validate_funnel(
    profile: &StructuredProfile,
    ranking: &TagRanking,
    funnel: &[QaPair],
) -> Result<(), FunnelError> {
    let mut covered = HashSet::new();
    let mut last_rank = 0;
    for (index, qa) in funnel.iter().enumerate() {
        if qa.position != index {
            return Err(FunnelError::Position {
                index,
                position: qa.position,
            });
        }
        if qa.question.trim().is_empty() {
            return Err(FunnelError::EmptyQuestion { position: index });
        }
        if qa.addressed.is_empty() {
            return Err(FunnelError::EmptyAddressed { position: index });
        }
        let mut min_rank = usize::MAX;
        for entry in &qa.addressed {
            if profile.find(entry).is_none() {
                return Err(FunnelError::NotInProfile {
                    position: index,
                    entry: entry.to_string(),
                });
            }
            covered.insert(entry.key());
            min_rank = min_rank.min(ranking.rank_of(&entry.tag).unwrap_or(usize::MAX));
        }
        if min_rank < last_rank {
            return Err(FunnelError::Order { position: index });
        }
        last_rank = min_rank;
    }
    if let Some(gap) = profile.entries().iter().find(|e| !covered.contains(&e.key())) {
        return Err(FunnelError::CoverageGap(gap.to_string()));
    }
    Ok(())
}

pub fn generate_funnel(
    profile: &StructuredProfile,
    ranking: &TagRanking,
    generator: &dyn QuestionGenerator,
) -> Result<Vec<QaPair>, ForwardError> {
    TagRanking::for_profile(profile, ranking.tags())?;
    let funnel = generator
        .generate(profile, ranking)?
        .into_iter()
        .map(|qa| {
            // store the profile's own copy of each addressed entry
            let addressed = qa
                .addressed
                .iter()
                .map(|e| profile.find(e).cloned().unwrap_or_else(|| e.clone()))
                .collect();
            QaPair { addressed, ..qa }
        })
        .collect::<Vec<_>>();
    validate_funnel(profile, ranking, &funnel)?;
    Ok(funnel)
}

/// Partial profile just before asking `funnel[t]`: the profile minus the
/// entries addressed by questions `t..n`, with questions `0..t` as history.
pub fn corrupt(
    profile: &StructuredProfile,
    funnel: &[QaPair],
    t: usize,
    mode: UpdateMode,
) -> Result<PartialProfile, ForwardError> {
    let n = funnel.len();
    if t > n {
        return Err(ForwardError::StepOutOfRange { t, n });
    }
    let removed = funnel[t..]
        .iter()
        .flat_map(|qa| qa.addressed.iter().map(Entry::key))
        .collect::<HashSet<_>>();
    Ok(PartialProfile {
        entries: profile
            .entries()
            .iter()
            .filter(|e| !removed.contains(&e.key()))
            .cloned()
            .collect(),
        history: funnel[..t].to_vec(),
        mode,
    })
}

/// Rows for steps `n-1` down to `0`.
pub fn build_questioner_dataset(
    profile: &StructuredProfile,
    funnel: &[QaPair],
    mode: UpdateMode,
) -> Result<Vec<TrainingExample>, ForwardError> {
    (0..funnel.len())
        .rev()
        .map(|t| {
            let state = corrupt(profile, funnel, t, mode)?;
            Ok(TrainingExample {
                source_id: profile.source_id().to_string(),
                step: t,
                input_profile: state.to_profile(profile.source_id()),
                history: state.history,
                mode,
                target_question: funnel[t].question.clone(),
            })
        })
        .collect()
}

/// Rows in the same descending order as the questioner dataset.
pub fn build_simulator_dataset(
    profile: &StructuredProfile,
    funnel: &[QaPair],
) -> Vec<SimulatorExample> {
    funnel
        .iter()
        .rev()
        .map(|qa| SimulatorExample {
            source_id: profile.source_id().to_string(),
            question: qa.question.clone(),
            full_profile: profile.clone(),
            target_answer: qa.answer.clone(),
            target_addressed: qa.addressed.clone(),
        })
        .collect()
}

/// Structure, rank, generate the funnel, then emit both datasets. The
/// returned profile has its entries in ranking order.
pub fn run_forward(
    text: &str,
    source_id: &str,
    backends: &ForwardBackends<'_>,
    cfg: &ForwardConfig,
) -> Result<ForwardArtifacts, ForwardError> {
    let structured =
        structure_profile(text, source_id, backends.structurer).map_err(|e| e.at("structure"))?;
    let ranking = rank_tags(&structured, backends.ranker).map_err(|e| e.at("rank"))?;
    let profile = structured
        .reordered(ranking.tags())
        .map_err(|e| ForwardError::from(BackendError::from(e)).at("rank"))?;
    let funnel =
        generate_funnel(&profile, &ranking, backends.generator).map_err(|e| e.at("funnel"))?;
    let questioner_rows =
        build_questioner_dataset(&profile, &funnel, cfg.mode).map_err(|e| e.at("dataset"))?;
    let simulator_rows = build_simulator_dataset(&profile, &funnel);
    Ok(ForwardArtifacts {
        profile,
        ranking,
        funnel,
        questioner_rows,
        simulator_rows,
    })
}

/// Raw profile input: an id and its text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawProfileText {
    pub source_id: String,
    pub text: String,
}

/// Runs the forward process over many profiles, up to `parallelism` at a
/// time. Output order matches input order.
pub fn run_forward_batch(
    inputs: &[RawProfileText],
    backends: &ForwardBackends<'_>,
    cfg: &ForwardConfig,
    parallelism: usize,
) -> Vec<Result<ForwardArtifacts, ForwardError>> {
    let job = || {
        inputs
            .par_iter()
            .map(|raw| run_forward(&raw.text, &raw.source_id, backends, cfg))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(job),
        Err(_) => inputs
            .iter()
            .map(|raw| run_forward(&raw.text, &raw.source_id, backends, cfg))
            .collect(),
    }
}

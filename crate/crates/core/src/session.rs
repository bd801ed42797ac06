//! Reverse process: a questioner and a simulated (or human) user take turns
//! until the reconstructed profile matches the hidden target or the question
//! budget runs out.
//!
//! [`Session`] is a turn-by-turn driver, so the same code serves batch
//! simulation ([`run_session`], [`run_batch`]) and interactive use over
//! HTTP.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{AnswerResult, Answerer, BackendError, Questioner, TurnContext};
use crate::profile::{
    profiles_equal, Entry, PartialProfile, ProfileView, QaPair, StructuredProfile,
    TransitionError, UpdateMode,
};

pub const DEFAULT_MAX_QUESTIONS: usize = 10;

fn default_max_questions() -> usize {
    DEFAULT_MAX_QUESTIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default = "default_max_questions")]
    pub max_questions: usize,
    #[serde(default)]
    pub update_mode: UpdateMode,
    #[serde(default)]
    pub start_state: PartialProfile,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_questions: DEFAULT_MAX_QUESTIONS,
            update_mode: UpdateMode::default(),
            start_state: PartialProfile::default(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn with_mode(mut self, mode: UpdateMode) -> Self {
        self.update_mode = mode;
        self
    }

    pub fn with_budget(mut self, max_questions: usize) -> Self {
        self.max_questions = max_questions;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ProfileMatch,
    QuestionBudgetExhausted,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::ProfileMatch => "profile_match",
            Termination::QuestionBudgetExhausted => "question_budget_exhausted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationCheck {
    Continue,
    ProfileMatch,
    BudgetExhausted,
}

impl TerminationCheck {
    pub fn termination(self) -> Option<Termination> {
        match self {
            TerminationCheck::Continue => None,
            TerminationCheck::ProfileMatch => Some(Termination::ProfileMatch),
            TerminationCheck::BudgetExhausted => Some(Termination::QuestionBudgetExhausted),
        }
    }
}

/// A match wins over an exhausted budget.
pub fn check_termination(
    current: &impl ProfileView,
    target: &impl ProfileView,
    count: usize,
    max_questions: usize,
) -> TerminationCheck {
    if profiles_equal(current, target) {
        TerminationCheck::ProfileMatch
    } else if count >= max_questions {
        TerminationCheck::BudgetExhausted
    } else {
        TerminationCheck::Continue
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("target profile is empty")]
    EmptyTarget,
    #[error("max_questions must be at least 1")]
    InvalidBudget,
    #[error("questioner failed at turn {turn}: {source}")]
    Questioner { turn: usize, source: BackendError },
    #[error("simulator failed at turn {turn}: {source}")]
    Simulator { turn: usize, source: BackendError },
    #[error("inconsistent answer at turn {turn}: {source}")]
    Transition { turn: usize, source: TransitionError },
    #[error("no question is awaiting an answer")]
    NoPendingQuestion,
    #[error("session already terminated ({0})")]
    Terminated(Termination),
}

/// Timing and raw policy output for one turn. Not part of the persisted
/// transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDebug {
    pub turn: usize,
    pub question_micros: u64,
    pub answer_micros: u64,
    pub questioner_output: String,
    pub simulator_output: AnswerResult,
}

#[derive(Debug, Clone)]
pub struct Transcript {
    pub target: StructuredProfile,
    pub start: PartialProfile,
    pub turns: Vec<QaPair>,
    pub reconstructed: PartialProfile,
    pub termination: Termination,
    pub question_count: usize,
    pub debug: Vec<TurnDebug>,
}

impl PartialEq for Transcript {
    fn eq(&self, other: &Self) -> bool {
        self.target == other.target
            && self.start == other.start
            && self.turns == other.turns
            && self.reconstructed == other.reconstructed
            && self.termination == other.termination
            && self.question_count == other.question_count
    }
}

impl Transcript {
    pub fn source_id(&self) -> &str {
        self.target.source_id()
    }

    pub fn mode(&self) -> UpdateMode {
        self.reconstructed.mode
    }

    /// State after the first `k` turns, replayed from the start state.
    pub fn prefix_state(&self, k: usize) -> Result<PartialProfile, TransitionError> {
        self.turns
            .iter()
            .take(k)
            .try_fold(self.start.clone(), |s, qa| s.apply_transition(qa))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub question: String,
    pub answer: String,
    pub addressed: Vec<Entry>,
    pub no_preference: bool,
}

impl From<&QaPair> for TurnRecord {
    fn from(qa: &QaPair) -> Self {
        Self {
            question: qa.question.clone(),
            answer: qa.answer.clone(),
            addressed: qa.addressed.clone(),
            no_preference: qa.is_no_preference(),
        }
    }
}

/// Persisted transcript shape (one JSONL line).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub source_id: String,
    pub turns: Vec<TurnRecord>,
    pub termination: Termination,
    pub question_count: usize,
    pub mode: UpdateMode,
    pub reconstructed: StructuredProfile,
    pub target: StructuredProfile,
    /// Only present when the session did not start from an empty profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<PartialProfile>,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("question_count {count} does not match {turns} turns")]
    CountMismatch { count: usize, turns: usize },
    #[error("stored reconstruction disagrees with replayed turns")]
    ReplayMismatch,
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

impl From<&Transcript> for TranscriptRecord {
    fn from(t: &Transcript) -> Self {
        let start_is_blank = t.start.entries.is_empty() && t.start.history.is_empty();
        Self {
            source_id: t.source_id().to_string(),
            turns: t.turns.iter().map(TurnRecord::from).collect(),
            termination: t.termination,
            question_count: t.question_count,
            mode: t.mode(),
            reconstructed: t.reconstructed.to_profile(t.source_id()),
            target: t.target.clone(),
            start: (!start_is_blank).then(|| t.start.clone()),
        }
    }
}

impl TryFrom<TranscriptRecord> for Transcript {
    type Error = TranscriptError;

    fn try_from(r: TranscriptRecord) -> Result<Self, Self::Error> {
        if r.question_count != r.turns.len() {
            return Err(TranscriptError::CountMismatch {
                count: r.question_count,
                turns: r.turns.len(),
            });
        }
        let start = r
            .start
            .unwrap_or_else(|| PartialProfile::empty(r.mode))
            .with_mode(r.mode);
        let turns = r
            .turns
            .into_iter()
            .enumerate()
            .map(|(i, t)| QaPair::new(t.question, t.answer, t.addressed, i))
            .collect::<Vec<_>>();
        let mut history = start.history.clone();
        history.extend(turns.iter().cloned());
        let reconstructed = PartialProfile {
            entries: r.reconstructed.entries().to_vec(),
            history,
            mode: r.mode,
        };
        let t = Transcript {
            target: r.target,
            start,
            turns,
            reconstructed,
            termination: r.termination,
            question_count: r.question_count,
            debug: Vec::new(),
        };
        if t.prefix_state(t.turns.len())? != t.reconstructed {
            return Err(TranscriptError::ReplayMismatch);
        }
        Ok(t)
    }
}

impl Serialize for Transcript {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TranscriptRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Transcript {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let record = TranscriptRecord::deserialize(d)?;
        Transcript::try_from(record).map_err(serde::de::Error::custom)
    }
}

/// Turn-by-turn elicitation session.
pub struct Session {
    target: StructuredProfile,
    cfg: SessionConfig,
    start: PartialProfile,
    state: PartialProfile,
    turns: Vec<QaPair>,
    rng: ChaCha8Rng,
    pending: Option<(String, u64)>,
    debug: Vec<TurnDebug>,
}

impl Session {
    pub fn new(target: StructuredProfile, cfg: SessionConfig) -> Result<Self, SessionError> {
        if target.is_empty() {
            return Err(SessionError::EmptyTarget);
        }
        if cfg.max_questions == 0 {
            return Err(SessionError::InvalidBudget);
        }
        let start = cfg.start_state.clone().with_mode(cfg.update_mode);
        Ok(Self {
            target,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            state: start.clone(),
            start,
            cfg,
            turns: Vec::new(),
            pending: None,
            debug: Vec::new(),
        })
    }

    pub fn target(&self) -> &StructuredProfile {
        &self.target
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn start(&self) -> &PartialProfile {
        &self.start
    }

    pub fn state(&self) -> &PartialProfile {
        &self.state
    }

    pub fn turns(&self) -> &[QaPair] {
        &self.turns
    }

    pub fn question_count(&self) -> usize {
        self.turns.len()
    }

    pub fn pending_question(&self) -> Option<&str> {
        self.pending.as_ref().map(|(q, _)| q.as_str())
    }

    pub fn status(&self) -> TerminationCheck {
        check_termination(
            &self.state,
            &self.target,
            self.turns.len(),
            self.cfg.max_questions,
        )
    }

    pub fn termination(&self) -> Option<Termination> {
        self.status().termination()
    }

    /// Asks the questioner for the next question unless the session is
    /// over. A question that is still awaiting an answer is returned as is.
    pub fn ask(&mut self, questioner: &dyn Questioner) -> Result<Option<&str>, SessionError> {
        if self.termination().is_some() {
            return Ok(None);
        }
        if self.pending.is_none() {
            let turn = self.turns.len();
            let started = Instant::now();
            let mut ctx = TurnContext {
                state: &self.state,
                target: &self.target,
                turn,
                rng: &mut self.rng,
            };
            let question = questioner
                .next_question(&mut ctx)
                .map_err(|source| SessionError::Questioner { turn, source })?;
            self.pending = Some((question, started.elapsed().as_micros() as u64));
        }
        Ok(self.pending_question())
    }

    /// Gets an answer to the pending question and applies the transition.
    /// On failure the question stays pending.
    pub fn answer(&mut self, answerer: &dyn Answerer) -> Result<TerminationCheck, SessionError> {
        if let Some(t) = self.termination() {
            return Err(SessionError::Terminated(t));
        }
        let (question, question_micros) =
            self.pending.clone().ok_or(SessionError::NoPendingQuestion)?;
        let turn = self.turns.len();
        let started = Instant::now();
        let result = answerer
            .answer(&question, &self.target)
            .map_err(|source| SessionError::Simulator { turn, source })?;
        let answer_micros = started.elapsed().as_micros() as u64;
        let qa = if result.is_no_preference {
            QaPair::no_preference(question.as_str(), turn)
        } else {
            result.clone().into_qa(&question, turn)
        };
        self.state = self
            .state
            .apply_transition(&qa)
            .map_err(|source| SessionError::Transition { turn, source })?;
        self.turns.push(qa);
        self.pending = None;
        self.debug.push(TurnDebug {
            turn,
            question_micros,
            answer_micros,
            questioner_output: question,
            simulator_output: result,
        });
        Ok(self.status())
    }

    /// Snapshot as a transcript; `None` while the session is still running.
    pub fn transcript(&self) -> Option<Transcript> {
        let termination = self.termination()?;
        Some(Transcript {
            target: self.target.clone(),
            start: self.start.clone(),
            turns: self.turns.clone(),
            reconstructed: self.state.clone(),
            termination,
            question_count: self.turns.len(),
            debug: self.debug.clone(),
        })
    }
}

pub fn run_session(
    questioner: &dyn Questioner,
    simulator: &dyn Answerer,
    target: &StructuredProfile,
    cfg: &SessionConfig,
) -> Result<Transcript, SessionError> {
    let mut session = Session::new(target.clone(), cfg.clone())?;
    while session.ask(questioner)?.is_some() {
        session.answer(simulator)?;
    }
    Ok(session
        .transcript()
        .expect("loop exits only once the session has terminated"))
}

/// Seed for the `index`-th session of a batch. Index 0 keeps the base seed.
pub fn session_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug)]
pub struct BatchFailure {
    pub index: usize,
    pub source_id: String,
    pub error: SessionError,
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    /// Successful transcripts in target order.
    pub transcripts: Vec<Transcript>,
    pub failures: Vec<BatchFailure>,
}

/// Runs one session per target, up to `parallelism` at a time. A failed
/// session is recorded and the rest of the batch carries on.
pub fn run_batch(
    questioner: &dyn Questioner,
    simulator: &dyn Answerer,
    targets: &[StructuredProfile],
    cfg: &SessionConfig,
    parallelism: usize,
) -> BatchOutcome {
    let one = |(i, target): (usize, &StructuredProfile)| {
        let cfg = cfg.clone().with_seed(session_seed(cfg.seed, i));
        run_session(questioner, simulator, target, &cfg)
    };
    let results: Vec<Result<Transcript, SessionError>> =
        match rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
        {
            Ok(pool) => pool.install(|| targets.par_iter().enumerate().map(one).collect()),
            Err(_) => targets.iter().enumerate().map(one).collect(),
        };
    let mut outcome = BatchOutcome::default();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok(t) => outcome.transcripts.push(t),
            Err(error) => outcome.failures.push(BatchFailure {
                index,
                source_id: targets[index].source_id().to_string(),
                error,
            }),
        }
    }
    outcome
}

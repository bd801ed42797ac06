//! Run configuration, loaded from TOML and then patched by CLI flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use elicit_core::backends::llm::{LlmBackend, API_KEY_ENV};
use elicit_core::backends::{
    AnswerInterpreter, Answerer, BackendConfig, OracleAnswerer, OracleInterpreter,
    OracleQuestionGenerator, OracleQuestioner, OracleRanker, OracleStructurer, QuestionGenerator,
    Questioner, RandomTemplateQuestioner, Ranker, Structurer,
};
use elicit_core::{SessionConfig, SyntheticProfileSpec, UpdateMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Oracle,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum QuestionerKind {
    #[default]
    Oracle,
    Llm,
    /// Uniform template questions over a fixed vocabulary.
    Random,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSelection {
    pub structurer: BackendKind,
    pub ranker: BackendKind,
    pub generator: BackendKind,
    pub questioner: QuestionerKind,
    pub simulator: BackendKind,
    pub interpreter: BackendKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Profiles to read. Each line holds either `{source_id, text}` or a
    /// structured profile.
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub transcripts: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            input: None,
            output_dir: PathBuf::from("out"),
            transcripts: None,
            report: None,
        }
    }
}

impl Paths {
    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn transcripts(&self) -> PathBuf {
        self.transcripts
            .clone()
            .unwrap_or_else(|| self.output("transcripts.jsonl"))
    }

    pub fn report(&self) -> PathBuf {
        self.report.clone().unwrap_or_else(|| self.output("report.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSettings {
    pub max_questions: usize,
    pub update_mode: UpdateMode,
}

impl Default for SessionSettings {
    fn default() -> Self {
        let d = SessionConfig::default();
        Self {
            max_questions: d.max_questions,
            update_mode: d.update_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub parallelism: usize,
    pub paths: Paths,
    pub backends: BackendSelection,
    /// Shared settings for every role that uses the `llm` backend.
    pub llm: Option<BackendConfig>,
    /// Per-role overrides keyed by role name.
    pub llm_roles: BTreeMap<String, BackendConfig>,
    pub session: SessionSettings,
    pub synth: SyntheticProfileSpec,
    /// Vocabulary of the random questioner. Defaults to the synthetic
    /// vocabulary.
    pub random_vocabulary: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: 4,
            paths: Paths::default(),
            backends: BackendSelection::default(),
            llm: None,
            llm_roles: BTreeMap::new(),
            session: SessionSettings::default(),
            synth: SyntheticProfileSpec::default(),
            random_vocabulary: None,
        }
    }
}

pub const ROLES: [&str; 6] = [
    "structurer",
    "ranker",
    "generator",
    "questioner",
    "simulator",
    "interpreter",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        if self.session.max_questions == 0 {
            return Err(CliError::Config("session.max_questions must be at least 1".into()));
        }
        if let Some(role) = self.llm_roles.keys().find(|r| !ROLES.contains(&r.as_str())) {
            return Err(CliError::Config(format!("unknown role `{role}` in llm_roles")));
        }
        if matches!(&self.random_vocabulary, Some(v) if v.is_empty()) {
            return Err(CliError::Config("random_vocabulary is empty".into()));
        }
        self.synth
            .validate()
            .map_err(|e| CliError::Config(format!("synth: {e}")))?;
        let mut paths = vec![self.paths.transcripts(), self.paths.report()];
        paths.extend(self.paths.input.clone());
        for (i, p) in paths.iter().enumerate() {
            if paths[..i].contains(p) {
                return Err(CliError::Config(format!("path {} is used twice", p.display())));
            }
        }
        Ok(())
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig::default()
            .with_budget(self.session.max_questions)
            .with_mode(self.session.update_mode)
            .with_seed(self.seed)
    }

    /// LLM settings for `role`, with the API key filled in from the
    /// environment when the config leaves it out.
    pub fn llm_config(&self, role: &str) -> Result<BackendConfig, CliError> {
        let mut cfg = self
            .llm_roles
            .get(role)
            .or(self.llm.as_ref())
            .cloned()
            .ok_or_else(|| {
                CliError::Config(format!("role `{role}` uses the llm backend but no [llm] block is set"))
            })?;
        if cfg.api_key.is_none() {
            cfg.api_key = std::env::var(API_KEY_ENV).ok();
        }
        cfg.validate().map_err(|e| CliError::Config(format!("{role}: {e}")))?;
        Ok(cfg)
    }

    fn llm(&self, role: &str) -> Result<Arc<LlmBackend>, CliError> {
        let cfg = self.llm_config(role)?;
        LlmBackend::from_config(cfg)
            .map(Arc::new)
            .map_err(|e| CliError::Config(format!("{role}: {e}")))
    }

    pub fn structurer(&self) -> Result<Arc<dyn Structurer>, CliError> {
        Ok(match self.backends.structurer {
            BackendKind::Oracle => Arc::new(OracleStructurer),
            BackendKind::Llm => self.llm("structurer")?,
        })
    }

    pub fn ranker(&self) -> Result<Arc<dyn Ranker>, CliError> {
        Ok(match self.backends.ranker {
            BackendKind::Oracle => Arc::new(OracleRanker),
            BackendKind::Llm => self.llm("ranker")?,
        })
    }

    pub fn generator(&self) -> Result<Arc<dyn QuestionGenerator>, CliError> {
        Ok(match self.backends.generator {
            BackendKind::Oracle => Arc::new(OracleQuestionGenerator),
            BackendKind::Llm => self.llm("generator")?,
        })
    }

    pub fn questioner(&self) -> Result<Arc<dyn Questioner>, CliError> {
        Ok(match self.backends.questioner {
            QuestionerKind::Oracle => Arc::new(OracleQuestioner),
            QuestionerKind::Llm => self.llm("questioner")?,
            QuestionerKind::Random => Arc::new(RandomTemplateQuestioner {
                vocabulary: self
                    .random_vocabulary
                    .clone()
                    .unwrap_or_else(|| self.synth.vocabulary.clone()),
            }),
        })
    }

    pub fn simulator(&self) -> Result<Arc<dyn Answerer>, CliError> {
        Ok(match self.backends.simulator {
            BackendKind::Oracle => Arc::new(OracleAnswerer),
            BackendKind::Llm => self.llm("simulator")?,
        })
    }

    pub fn interpreter(&self) -> Result<Arc<dyn AnswerInterpreter>, CliError> {
        Ok(match self.backends.interpreter {
            BackendKind::Oracle => Arc::new(OracleInterpreter),
            BackendKind::Llm => self.llm("interpreter")?,
        })
    }
}

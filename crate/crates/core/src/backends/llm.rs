//! LLM-over-HTTP backends.
//!
//! Everything that talks to a model goes through [`Completion`]. The HTTP
//! implementation posts an OpenAI-style chat-completion request and retries
//! transport failures and 5xx responses with exponential backoff. Client
//! errors (4xx) are returned immediately.

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, warn};

use super::parse::parse_structured_response;
use super::prompts::{render, PromptSet, DEFAULT_TEMPLATE_ID};
use super::{
    AnswerInterpreter, AnswerResult, Answerer, BackendError, QuestionGenerator, Questioner,
    Ranker, Structurer, TurnContext,
};
use crate::forward::TagRanking;
use crate::profile::{
    flatten_profile, normalize, Entry, ProfileView, QaPair, StructuredProfile,
};

pub const API_KEY_ENV: &str = "ELICIT_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("endpoint response has no completion text: {0}")]
    MalformedResponse(String),
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}
fn default_template() -> String {
    DEFAULT_TEMPLATE_ID.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f32,
    #[serde(default = "default_template")]
    pub prompt_template_id: String,
    /// Delay before the first retry; doubles on every further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Falls back to `ELICIT_API_KEY` when unset.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            request_timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            temperature: 0.0,
            prompt_template_id: default_template(),
            backoff_base_ms: default_backoff_ms(),
            max_in_flight: default_in_flight(),
            api_key: None,
        }
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.endpoint_url.trim().is_empty() {
            return Err(LlmError::InvalidConfig("endpoint_url is empty".into()));
        }
        if self.request_timeout_ms == 0 {
            return Err(LlmError::InvalidConfig("request timeout must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(LlmError::InvalidConfig(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    fn resolved_api_key(&self) -> Option<String> {
        self.api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok())
            .filter(|k| !k.is_empty())
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(16);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(30_000))
    }
}

/// Raw prompt-in, text-out access to a model.
pub trait Completion: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

impl<F> Completion for F
where
    F: Fn(&str) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self(prompt)
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    free: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        InFlightGuard { owner: self }
    }
}

struct InFlightGuard<'a> {
    owner: &'a InFlight,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.owner.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.owner.cv.notify_one();
    }
}

/// HTTP chat-completion client shared across threads.
pub struct HttpCompletion {
    cfg: BackendConfig,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl HttpCompletion {
    pub fn new(cfg: BackendConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.request_timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = InFlight::new(cfg.max_in_flight);
        Ok(Self {
            cfg,
            agent,
            in_flight,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }
}

impl Completion for HttpCompletion {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let _permit = self.in_flight.acquire();
        complete_with(&self.agent, &self.cfg, prompt)
    }
}

/// One-shot completion with a fresh client.
pub fn llm_complete(prompt: &str, cfg: &BackendConfig) -> Result<String, LlmError> {
    HttpCompletion::new(cfg.clone())?.complete(prompt)
}

enum Failure {
    Retryable(String),
    Timeout,
    Fatal(LlmError),
}

fn complete_with(agent: &ureq::Agent, cfg: &BackendConfig, prompt: &str) -> Result<String, LlmError> {
    let body = json!({
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    });
    let attempts = cfg.max_retries + 1;
    let mut last = Failure::Retryable(String::new());
    for attempt in 1..=attempts {
        if attempt > 1 {
            thread::sleep(cfg.backoff(attempt - 1));
        }
        last = match send_once(agent, cfg, &body) {
            Ok(text) => return Ok(text),
            Err(Failure::Fatal(e)) => return Err(e),
            Err(other) => other,
        };
        match &last {
            Failure::Retryable(msg) => warn!(attempt, %msg, "completion attempt failed"),
            Failure::Timeout => warn!(attempt, "completion attempt timed out"),
            Failure::Fatal(_) => unreachable!(),
        }
    }
    Err(match last {
        Failure::Timeout => LlmError::Timeout { attempts },
        Failure::Retryable(message) => LlmError::Transport { attempts, message },
        Failure::Fatal(e) => e,
    })
}

fn send_once(agent: &ureq::Agent, cfg: &BackendConfig, body: &Value) -> Result<String, Failure> {
    let mut req = agent
        .post(&cfg.endpoint_url)
        .header("content-type", "application/json");
    if let Some(key) = cfg.resolved_api_key() {
        req = req.header("authorization", &format!("Bearer {key}"));
    }
    let mut resp = match req.send_json(body) {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => return Err(Failure::Timeout),
        Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
            return Err(Failure::Timeout)
        }
        Err(e) => return Err(Failure::Retryable(e.to_string())),
    };
    let status = resp.status().as_u16();
    let text = match resp.body_mut().read_to_string() {
        Ok(t) => t,
        Err(ureq::Error::Timeout(_)) => return Err(Failure::Timeout),
        Err(e) => return Err(Failure::Retryable(e.to_string())),
    };
    debug!(status, bytes = text.len(), "completion response");
    match status {
        200..=299 => extract_completion(&text).map_err(Failure::Fatal),
        400..=499 => Err(Failure::Fatal(LlmError::Status { status, body: text })),
        _ => Err(Failure::Retryable(format!("HTTP {status}: {text}"))),
    }
}

/// Pulls the completion text out of the common response shapes.
fn extract_completion(body: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| LlmError::MalformedResponse(format!("{e}: {body}")))?;
    let candidates = [
        v.pointer("/choices/0/message/content"),
        v.pointer("/choices/0/text"),
        v.get("content"),
        v.get("text"),
        v.get("output_text"),
    ];
    let text = candidates
        .into_iter()
        .flatten()
        .find_map(Value::as_str)
        .map(str::to_string);
    text.ok_or_else(|| LlmError::MalformedResponse(body.to_string()))
}

/// Model-backed implementation of every backend role. Use one instance per
/// role so each role can carry its own config (temperature in particular).
pub struct LlmBackend {
    completion: Arc<dyn Completion>,
    prompts: PromptSet,
}

impl LlmBackend {
    pub fn new(completion: Arc<dyn Completion>, template_id: &str) -> Result<Self, BackendError> {
        Ok(Self {
            completion,
            prompts: PromptSet::get(template_id)?,
        })
    }

    pub fn from_config(cfg: BackendConfig) -> Result<Self, BackendError> {
        let id = cfg.prompt_template_id.clone();
        Self::new(Arc::new(HttpCompletion::new(cfg)?), &id)
    }

    fn ask(&self, template: &str, vars: &[(&str, &str)]) -> Result<String, BackendError> {
        Ok(self.completion.complete(&render(template, vars))?)
    }
}

fn invalid(what: &'static str, detail: impl Into<String>, raw: &str) -> BackendError {
    BackendError::Invalid {
        what,
        detail: detail.into(),
        raw: raw.to_string(),
    }
}

fn entry_from_value(v: &Value) -> Option<Entry> {
    let tag = v.get("tag")?.as_str()?;
    let content = v.get("content")?.as_str()?;
    Some(Entry::new(tag.trim(), content.trim()))
}

/// Accepts `{"entries": [...]}`, a bare array of `{tag, content}`, or a
/// flat `{tag: content}` object.
fn entries_from_value(v: &Value) -> Option<Vec<Entry>> {
    match v {
        Value::Object(map) if map.contains_key("entries") => entries_from_value(&map["entries"]),
        Value::Array(items) => items.iter().map(entry_from_value).collect(),
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| v.as_str().map(|c| Entry::new(k.trim(), c.trim())))
            .collect(),
        _ => None,
    }
}

fn string_list(v: &Value, keys: &[&str]) -> Option<Vec<String>> {
    let arr = match v {
        Value::Array(a) => a,
        Value::Object(map) => keys.iter().find_map(|k| map.get(*k)?.as_array())?,
        _ => return None,
    };
    arr.iter().map(|s| s.as_str().map(str::to_string)).collect()
}

impl Structurer for LlmBackend {
    fn structure(&self, text: &str, source_id: &str) -> Result<StructuredProfile, BackendError> {
        let raw = self.ask(self.prompts.structure, &[("text", text)])?;
        let value = parse_structured_response(&raw)?;
        let entries = entries_from_value(&value)
            .ok_or_else(|| invalid("profile", "expected a list of tag/content entries", &raw))?;
        if entries.is_empty() {
            return Err(BackendError::EmptyExtraction);
        }
        StructuredProfile::new(source_id, entries).map_err(|e| invalid("profile", e.to_string(), &raw))
    }
}

impl Ranker for LlmBackend {
    fn rank(&self, profile: &StructuredProfile) -> Result<TagRanking, BackendError> {
        let tags = profile.tags().collect::<Vec<_>>().join("\n");
        let flat = flatten_profile(profile);
        let mut feedback = String::new();
        let mut last_err = None;
        for _ in 0..2 {
            let raw = self.ask(
                self.prompts.rank,
                &[("profile", &flat), ("tags", &tags), ("feedback", &feedback)],
            )?;
            let attempt = parse_structured_response(&raw)
                .map_err(BackendError::from)
                .and_then(|v| {
                    string_list(&v, &["ranking", "tags"])
                        .ok_or_else(|| invalid("ranking", "expected a JSON array of tags", &raw))
                })
                .and_then(|order| {
                    TagRanking::for_profile(profile, &order)
                        .map_err(|e| invalid("ranking", e.to_string(), &raw))
                });
            match attempt {
                Ok(r) => return Ok(r),
                Err(e) => {
                    feedback = format!(
                        "\nYour previous answer was rejected ({e}). Return each of the tags above exactly once."
                    );
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.expect("two attempts were made"))
    }
}

fn resolve_tag<'p>(profile: &'p StructuredProfile, tag: &str, raw: &str) -> Result<&'p Entry, BackendError> {
    profile
        .get(tag)
        .ok_or_else(|| invalid("addressed entries", format!("tag `{tag}` is not in the profile"), raw))
}

/// Reads `tags: [..]` or `addressed: [..]` (strings or `{tag, content}`)
/// and maps them onto the profile's own entries.
fn addressed_entries(item: &Value, profile: &StructuredProfile, raw: &str) -> Result<Vec<Entry>, BackendError> {
    let list = item
        .get("addressed")
        .or_else(|| item.get("tags"))
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    list.iter()
        .map(|v| {
            let tag = v
                .as_str()
                .or_else(|| v.get("tag").and_then(Value::as_str))
                .ok_or_else(|| invalid("addressed entries", "expected a tag", raw))?;
            resolve_tag(profile, tag, raw).cloned()
        })
        .collect()
}

impl QuestionGenerator for LlmBackend {
    fn generate(
        &self,
        profile: &StructuredProfile,
        ranking: &TagRanking,
    ) -> Result<Vec<QaPair>, BackendError> {
        let profile_json = serde_json::to_string_pretty(profile).unwrap_or_default();
        let tags = ranking.tags().join("\n");
        let raw = self.ask(self.prompts.funnel, &[("profile", &profile_json), ("tags", &tags)])?;
        let value = parse_structured_response(&raw)?;
        let items = match &value {
            Value::Array(a) => a.clone(),
            Value::Object(m) => m
                .get("questions")
                .and_then(Value::as_array)
                .cloned()
                .ok_or_else(|| invalid("funnel", "expected a list of questions", &raw))?,
            _ => return Err(invalid("funnel", "expected a list of questions", &raw)),
        };
        items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let question = item
                    .get("question")
                    .and_then(Value::as_str)
                    .filter(|q| !q.trim().is_empty())
                    .ok_or_else(|| invalid("funnel", format!("item {i} has no question"), &raw))?;
                let answer = item.get("answer").and_then(Value::as_str).unwrap_or("");
                let addressed = addressed_entries(item, profile, &raw)?;
                Ok(QaPair::new(question.trim(), answer.trim(), addressed, i))
            })
            .collect()
    }
}

fn clean_question(raw: &str) -> Option<String> {
    if let Ok(v) = parse_structured_response(raw) {
        if let Some(q) = v.get("question").and_then(Value::as_str) {
            return Some(q.trim().to_string()).filter(|q| !q.is_empty());
        }
    }
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    let line = line
        .strip_prefix("Question:")
        .or_else(|| line.strip_prefix("Q:"))
        .unwrap_or(line)
        .trim()
        .trim_matches('"')
        .trim();
    (!line.is_empty()).then(|| line.to_string())
}

impl Questioner for LlmBackend {
    fn next_question(&self, ctx: &mut TurnContext<'_>) -> Result<String, BackendError> {
        let state = ctx.state.render_for_prompt();
        let raw = self.ask(self.prompts.question, &[("state", &state)])?;
        clean_question(&raw).ok_or_else(|| invalid("question", "empty question", &raw))
    }
}

impl Answerer for LlmBackend {
    fn answer(
        &self,
        question: &str,
        profile: &StructuredProfile,
    ) -> Result<AnswerResult, BackendError> {
        let flat = flatten_profile(profile);
        let raw = self.ask(self.prompts.answer, &[("profile", &flat), ("question", question)])?;
        let value = parse_structured_response(&raw)?;
        let answer = value
            .get("answer")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid("answer", "missing `answer` field", &raw))?;
        let addressed = addressed_entries(&value, profile, &raw)?;
        Ok(AnswerResult::from_raw(answer, addressed))
    }
}

impl AnswerInterpreter for LlmBackend {
    fn interpret(
        &self,
        question: &str,
        reply: &str,
        known_tags: &[&str],
    ) -> Result<AnswerResult, BackendError> {
        let tags = known_tags.join(", ");
        let raw = self.ask(
            self.prompts.interpret,
            &[("tags", &tags), ("question", question), ("reply", reply)],
        )?;
        let value = parse_structured_response(&raw)?;
        let list = value
            .get("addressed")
            .and_then(Value::as_array)
            .ok_or_else(|| invalid("interpretation", "missing `addressed` list", &raw))?;
        let entries = list
            .iter()
            .map(|v| {
                let mut e = entry_from_value(v)
                    .ok_or_else(|| invalid("interpretation", "expected {tag, content}", &raw))?;
                if let Some(known) = known_tags.iter().find(|t| normalize(t) == e.tag_key()) {
                    e.tag = known.to_string();
                }
                Ok(e)
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        Ok(AnswerResult::from_raw(reply, entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn scripted(replies: Vec<&'static str>) -> Arc<dyn Completion> {
        let idx = AtomicUsize::new(0);
        Arc::new(move |_prompt: &str| {
            let i = idx.fetch_add(1, Ordering::SeqCst);
            Ok(replies[i.min(replies.len() - 1)].to_string())
        })
    }

    fn profile() -> StructuredProfile {
        StructuredProfile::new(
            "u",
            vec![
                Entry::new("Directors", "The user likes Nolan"),
                Entry::new("Genre", "The user likes action movies"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn extract_completion_shapes() {
        let chat = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(extract_completion(chat).unwrap(), "hi");
        assert_eq!(extract_completion(r#"{"text":"yo"}"#).unwrap(), "yo");
        assert!(matches!(
            extract_completion(r#"{"nothing":1}"#),
            Err(LlmError::MalformedResponse(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::new("http://localhost:1", "m");
        assert!(cfg.validate().is_ok());
        cfg.request_timeout_ms = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = BackendConfig::new("http://localhost:1", "m");
        cfg.temperature = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn backoff_doubles() {
        let mut cfg = BackendConfig::new("x", "m");
        cfg.backoff_base_ms = 100;
        assert_eq!(cfg.backoff(1), Duration::from_millis(100));
        assert_eq!(cfg.backoff(3), Duration::from_millis(400));
    }

    #[test]
    fn structurer_validates_output() {
        let llm = LlmBackend::new(
            scripted(vec!["```json\n{\"entries\": [{\"tag\": \"Genre\", \"content\": \"likes action\"}]}\n```"]),
            "v1",
        )
        .unwrap();
        let p = llm.structure("likes action", "u").unwrap();
        assert_eq!(p.entries(), &[Entry::new("Genre", "likes action")]);

        let dup = LlmBackend::new(
            scripted(vec![r#"[{"tag":"Genre","content":"a"},{"tag":"genre","content":"b"}]"#]),
            "v1",
        )
        .unwrap();
        assert!(matches!(
            dup.structure("x", "u"),
            Err(BackendError::Invalid { what: "profile", .. })
        ));
    }

    #[test]
    fn ranker_gets_one_repair_attempt() {
        let llm = LlmBackend::new(
            scripted(vec![r#"["Genre"]"#, r#"["genre", "Directors"]"#]),
            "v1",
        )
        .unwrap();
        let r = llm.rank(&profile()).unwrap();
        assert_eq!(r.tags(), &["Genre".to_string(), "Directors".to_string()]);

        let stubborn = LlmBackend::new(scripted(vec![r#"["Genre", "Humor"]"#]), "v1").unwrap();
        assert!(matches!(
            stubborn.rank(&profile()),
            Err(BackendError::Invalid { what: "ranking", .. })
        ));
    }

    #[test]
    fn generator_maps_tags_to_profile_entries() {
        let llm = LlmBackend::new(
            scripted(vec![
                r#"[{"question":"Do you like action movies?","answer":"yes","tags":["Genre"]},
                    {"question":"Any favourite director?","answer":"Nolan","addressed":[{"tag":"Directors","content":"whatever"}]}]"#,
            ]),
            "v1",
        )
        .unwrap();
        let p = profile();
        let ranking = TagRanking::for_profile(&p, &["Genre".into(), "Directors".into()]).unwrap();
        let funnel = llm.generate(&p, &ranking).unwrap();
        assert_eq!(funnel[0].addressed, vec![p.get("Genre").unwrap().clone()]);
        assert_eq!(funnel[1].addressed, vec![p.get("Directors").unwrap().clone()]);
        assert_eq!(funnel[1].position, 1);
    }

    #[test]
    fn answerer_rejects_fabricated_tags() {
        let llm = LlmBackend::new(
            scripted(vec![r#"{"answer":"yes","addressed":[{"tag":"Humor","content":"x"}]}"#]),
            "v1",
        )
        .unwrap();
        assert!(llm.answer("Funny?", &profile()).is_err());

        let idk = LlmBackend::new(scripted(vec![r#"{"answer":"I don't know","addressed":[]}"#]), "v1").unwrap();
        assert_eq!(idk.answer("Funny?", &profile()).unwrap(), AnswerResult::no_preference());
    }

    #[test]
    fn question_cleanup() {
        assert_eq!(clean_question("Question: \"What genre?\"\n").unwrap(), "What genre?");
        assert_eq!(clean_question(r#"{"question": "Which decade?"}"#).unwrap(), "Which decade?");
        assert!(clean_question("   \n ").is_none());
    }

    #[test]
    fn interpreter_reuses_known_tag_spelling() {
        let llm = LlmBackend::new(
            scripted(vec![r#"{"addressed":[{"tag":"genre","content":"The user likes westerns"}]}"#]),
            "v1",
        )
        .unwrap();
        let a = llm.interpret("What genre?", "westerns", &["Genre"]).unwrap();
        assert_eq!(a.addressed, vec![Entry::new("Genre", "The user likes westerns")]);
        assert_eq!(a.answer_text, "westerns");
    }
}

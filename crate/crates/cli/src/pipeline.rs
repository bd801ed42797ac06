//! Batch pipelines behind the subcommands. Every function reads and writes
//! files under the configured paths and returns a short summary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use elicit_core::backends::Structurer;
use elicit_core::forward::{run_forward_batch, RawProfileText};
use elicit_core::jsonl::{read_jsonl, write_jsonl, JsonlError};
use elicit_core::profile::flatten_profile;
use elicit_core::session::{run_batch, SessionError};
use elicit_core::{
    evaluate_run, synth_profiles, ForwardBackends, ForwardConfig, ForwardError, MetricsReport,
    QaPair, StructuredProfile, TagRanking, Transcript,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report;

pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const QUESTIONER_FILE: &str = "questioner.jsonl";
pub const SIMULATOR_FILE: &str = "simulator.jsonl";
pub const FUNNELS_FILE: &str = "funnels.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const DEBUG_FILE: &str = "debug.jsonl";
pub const REPORT_CSV_FILE: &str = "report.csv";

/// A profile line: raw text to be structured, or an already structured
/// profile.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileInput {
    Raw(RawProfileText),
    Structured(StructuredProfile),
}

impl ProfileInput {
    pub fn source_id(&self) -> &str {
        match self {
            ProfileInput::Raw(r) => &r.source_id,
            ProfileInput::Structured(p) => p.source_id(),
        }
    }

    pub fn to_raw(&self) -> RawProfileText {
        match self {
            ProfileInput::Raw(r) => r.clone(),
            ProfileInput::Structured(p) => RawProfileText {
                source_id: p.source_id().to_string(),
                text: flatten_profile(p),
            },
        }
    }
}

/// The per-profile part of the forward output that the datasets derive from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelRecord {
    pub source_id: String,
    pub profile: StructuredProfile,
    pub ranking: TagRanking,
    pub funnel: Vec<QaPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub index: usize,
    pub source_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub items: usize,
    pub failures: usize,
    pub outputs: Vec<PathBuf>,
}

fn input_err(path: &Path, e: JsonlError) -> CliError {
    match e {
        JsonlError::Io(source) => CliError::io(path, source),
        JsonlError::Parse { .. } => CliError::Input {
            path: path.to_path_buf(),
            detail: e.to_string(),
        },
    }
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| input_err(path, e))
}

pub fn write_file<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_jsonl(BufWriter::new(file), items).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn read_profile_inputs(path: &Path) -> Result<Vec<ProfileInput>, CliError> {
    let values: Vec<Value> = read_file(path)?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let parsed = if v.get("text").is_some() {
                serde_json::from_value(v).map(ProfileInput::Raw)
            } else {
                serde_json::from_value(v).map(ProfileInput::Structured)
            };
            parsed.map_err(|e| CliError::Input {
                path: path.to_path_buf(),
                detail: format!("profile {}: {e}", i + 1),
            })
        })
        .collect()
}

fn input_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths
        .input
        .clone()
        .unwrap_or_else(|| cfg.paths.output(PROFILES_FILE))
}

/// Structured profiles for a session run. Raw text is structured with the
/// configured structurer.
pub fn load_targets(
    path: &Path,
    structurer: &dyn Structurer,
) -> Result<Vec<StructuredProfile>, CliError> {
    read_profile_inputs(path)?
        .into_iter()
        .map(|input| match input {
            ProfileInput::Structured(p) => Ok(p),
            ProfileInput::Raw(r) => structurer
                .structure(&r.text, &r.source_id)
                .map_err(|e| CliError::Backend(format!("{}: {e}", r.source_id))),
        })
        .collect()
}

fn check_some_succeeded(command: &str, items: usize, failures: &[FailureRecord]) -> Result<(), CliError> {
    if items > 0 && failures.len() == items {
        return Err(CliError::Backend(format!(
            "{command}: all {items} items failed, first: {}",
            failures[0].error
        )));
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, count: usize) -> Result<Summary, CliError> {
    if count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    let profiles = synth_profiles(&cfg.synth, count).map_err(|e| CliError::Config(e.to_string()))?;
    let out = cfg.paths.output(PROFILES_FILE);
    write_file(&out, &profiles)?;
    Ok(Summary {
        command: "synth",
        items: profiles.len(),
        failures: 0,
        outputs: vec![out],
    })
}

pub fn forward(cfg: &RunConfig) -> Result<Summary, CliError> {
    let inputs = read_profile_inputs(&input_path(cfg))?;
    forward_inputs(cfg, &inputs, "forward")
}

/// Synthesizes profiles and runs the forward process on them in one go.
pub fn gen_data(cfg: &RunConfig, count: usize) -> Result<Summary, CliError> {
    let mut summary = synth(cfg, count)?;
    let inputs = read_profile_inputs(&summary.outputs[0])?;
    let fwd = forward_inputs(cfg, &inputs, "gen-data")?;
    summary.command = fwd.command;
    summary.failures = fwd.failures;
    summary.outputs.extend(fwd.outputs);
    Ok(summary)
}

fn forward_inputs(cfg: &RunConfig, inputs: &[ProfileInput], command: &'static str) -> Result<Summary, CliError> {
    let structurer = cfg.structurer()?;
    let ranker = cfg.ranker()?;
    let generator = cfg.generator()?;
    let backends = ForwardBackends {
        structurer: structurer.as_ref(),
        ranker: ranker.as_ref(),
        generator: generator.as_ref(),
    };
    let fwd_cfg = ForwardConfig {
        mode: cfg.session.update_mode,
    };
    let raw = inputs.iter().map(ProfileInput::to_raw).collect::<Vec<_>>();
    let results = run_forward_batch(&raw, &backends, &fwd_cfg, cfg.parallelism);

    let (mut questioner, mut simulator, mut funnels, mut failures) = (vec![], vec![], vec![], vec![]);
    for (index, (input, result)) in raw.iter().zip(results).enumerate() {
        match result {
            Ok(a) => {
                funnels.push(FunnelRecord {
                    source_id: a.profile.source_id().to_string(),
                    profile: a.profile,
                    ranking: a.ranking,
                    funnel: a.funnel,
                });
                questioner.extend(a.questioner_rows);
                simulator.extend(a.simulator_rows);
            }
            Err(e) => {
                tracing::warn!(source_id = %input.source_id, error = %e, "forward process failed");
                failures.push(FailureRecord {
                    index,
                    source_id: input.source_id.clone(),
                    error: error_chain(&e),
                });
            }
        }
    }
    check_some_succeeded(command, raw.len(), &failures)?;
    let outputs = vec![
        cfg.paths.output(QUESTIONER_FILE),
        cfg.paths.output(SIMULATOR_FILE),
        cfg.paths.output(FUNNELS_FILE),
        cfg.paths.output(FAILURES_FILE),
    ];
    write_file(&outputs[0], &questioner)?;
    write_file(&outputs[1], &simulator)?;
    write_file(&outputs[2], &funnels)?;
    write_file(&outputs[3], &failures)?;
    Ok(Summary {
        command,
        items: raw.len(),
        failures: failures.len(),
        outputs,
    })
}

fn error_chain(e: &ForwardError) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let next = s.to_string();
        if !msg.contains(&next) {
            msg = format!("{msg}: {next}");
        }
        source = s.source();
    }
    msg
}

pub fn simulate(cfg: &RunConfig, debug_log: Option<&Path>) -> Result<Summary, CliError> {
    let targets = load_targets(&input_path(cfg), cfg.structurer()?.as_ref())?;
    let questioner = cfg.questioner()?;
    let simulator = cfg.simulator()?;
    let outcome = run_batch(
        questioner.as_ref(),
        simulator.as_ref(),
        &targets,
        &cfg.session_config(),
        cfg.parallelism,
    );
    let failures = outcome
        .failures
        .iter()
        .map(|f| {
            tracing::warn!(source_id = %f.source_id, error = %f.error, "session failed");
            FailureRecord {
                index: f.index,
                source_id: f.source_id.clone(),
                error: session_error_text(&f.error),
            }
        })
        .collect::<Vec<_>>();
    check_some_succeeded("simulate", targets.len(), &failures)?;
    let mut outputs = vec![cfg.paths.transcripts(), cfg.paths.output(FAILURES_FILE)];
    write_file(&outputs[0], &outcome.transcripts)?;
    write_file(&outputs[1], &failures)?;
    if let Some(path) = debug_log {
        #[derive(Serialize)]
        struct DebugLine<'a> {
            source_id: &'a str,
            turns: &'a [elicit_core::session::TurnDebug],
        }
        let lines = outcome
            .transcripts
            .iter()
            .map(|t| DebugLine {
                source_id: t.source_id(),
                turns: &t.debug,
            })
            .collect::<Vec<_>>();
        write_file(path, &lines)?;
        outputs.push(path.to_path_buf());
    }
    Ok(Summary {
        command: "simulate",
        items: targets.len(),
        failures: failures.len(),
        outputs,
    })
}

fn session_error_text(e: &SessionError) -> String {
    match std::error::Error::source(e) {
        Some(s) => format!("{e}: {s}"),
        None => e.to_string(),
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<(MetricsReport, Summary), CliError> {
    let transcripts: Vec<Transcript> = read_file(&cfg.paths.transcripts())?;
    let report = evaluate_run(&transcripts).map_err(|e| CliError::Pipeline(e.to_string()))?;
    let json_path = cfg.paths.report();
    let csv_path = json_path.with_extension("csv");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&json_path, &format!("{json}\n"))?;
    write_text(&csv_path, &report::to_csv(&report))?;
    Ok((
        report,
        Summary {
            command: "evaluate",
            items: transcripts.len(),
            failures: 0,
            outputs: vec![json_path, csv_path],
        },
    ))
}

/// Renders score curves from one or more `label=path` report files.
pub fn plot(series: &[(String, PathBuf)], out: &Path) -> Result<Summary, CliError> {
    if series.is_empty() {
        return Err(CliError::Config("no reports given".into()));
    }
    let reports = series
        .iter()
        .map(|(label, path)| {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let report: MetricsReport = serde_json::from_str(&text).map_err(|e| CliError::Input {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            Ok((label.clone(), report))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_text(out, &report::curves_svg(&reports))?;
    Ok(Summary {
        command: "report",
        items: reports.len(),
        failures: 0,
        outputs: vec![out.to_path_buf()],
    })
}

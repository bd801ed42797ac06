use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elicit_cli::config::{BackendKind, QuestionerKind};
use elicit_cli::pipeline::{self, Summary};
use elicit_cli::server::{self, AppState, ServeOptions};
use elicit_cli::{CliError, RunConfig};
use elicit_core::UpdateMode;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "elicit", version, about = "Profile corruption data, elicitation sessions and metrics")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    max_questions: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    AnswersOnly,
    QuestionsAndAnswers,
}

impl From<ModeArg> for UpdateMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::AnswersOnly => UpdateMode::AnswersOnly,
            ModeArg::QuestionsAndAnswers => UpdateMode::QuestionsAndAnswers,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic structured profiles.
    Synth {
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Run the forward process over input profiles and write both datasets.
    Forward {
        /// Backend for structuring, ranking and funnel generation.
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
    },
    /// Synthesize profiles and run the forward process on them.
    GenData {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
    },
    /// Run questioner and simulator sessions over input profiles.
    Simulate {
        #[arg(long, value_enum)]
        questioner: Option<QuestionerKind>,
        #[arg(long, value_enum)]
        simulator: Option<BackendKind>,
        #[arg(long)]
        transcripts: Option<PathBuf>,
        /// Per-turn timings and raw backend output, kept apart from the
        /// transcripts.
        #[arg(long)]
        debug_log: Option<PathBuf>,
    },
    /// Score transcripts and write the report as JSON and CSV.
    Evaluate {
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Plot score-versus-questions curves from reports.
    Report {
        /// `label=path` pairs; defaults to the configured report.
        #[arg(long = "series")]
        series: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        transcript_log: Option<PathBuf>,
        #[arg(long, value_enum)]
        questioner: Option<QuestionerKind>,
        #[arg(long, value_enum)]
        interpreter: Option<BackendKind>,
    },
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    if let Some(p) = g.parallelism {
        cfg.parallelism = p;
    }
    if let Some(p) = &g.input {
        cfg.paths.input = Some(p.clone());
    }
    if let Some(p) = &g.output_dir {
        cfg.paths.output_dir = p.clone();
    }
    if let Some(n) = g.max_questions {
        cfg.session.max_questions = n;
    }
    if let Some(m) = g.mode {
        cfg.session.update_mode = m.into();
    }
    Ok(cfg)
}

fn parse_series(raw: &[String], cfg: &RunConfig) -> Result<Vec<(String, PathBuf)>, CliError> {
    if raw.is_empty() {
        return Ok(vec![("run".to_string(), cfg.paths.report())]);
    }
    raw.iter()
        .map(|s| match s.split_once('=') {
            Some((label, path)) if !label.is_empty() && !path.is_empty() => {
                Ok((label.to_string(), PathBuf::from(path)))
            }
            _ => Err(CliError::Config(format!("series `{s}` is not label=path"))),
        })
        .collect()
}

fn run(cli: Cli) -> Result<Option<Summary>, CliError> {
    let mut cfg = load_config(&cli.global)?;
    let summary = match cli.command {
        Command::Synth { count } => {
            cfg.validate()?;
            pipeline::synth(&cfg, count)?
        }
        Command::Forward { backend } => {
            set_forward_backend(&mut cfg, backend);
            cfg.validate()?;
            pipeline::forward(&cfg)?
        }
        Command::GenData { count, backend } => {
            set_forward_backend(&mut cfg, backend);
            cfg.validate()?;
            pipeline::gen_data(&cfg, count)?
        }
        Command::Simulate {
            questioner,
            simulator,
            transcripts,
            debug_log,
        } => {
            if let Some(q) = questioner {
                cfg.backends.questioner = q;
            }
            if let Some(s) = simulator {
                cfg.backends.simulator = s;
            }
            if transcripts.is_some() {
                cfg.paths.transcripts = transcripts;
            }
            cfg.validate()?;
            pipeline::simulate(&cfg, debug_log.as_deref())?
        }
        Command::Evaluate { transcripts, report } => {
            if transcripts.is_some() {
                cfg.paths.transcripts = transcripts;
            }
            if report.is_some() {
                cfg.paths.report = report;
            }
            cfg.validate()?;
            pipeline::evaluate(&cfg)?.1
        }
        Command::Report { series, out } => {
            let series = parse_series(&series, &cfg)?;
            let out = out.unwrap_or_else(|| cfg.paths.output("curves.svg"));
            pipeline::plot(&series, &out)?
        }
        Command::Serve {
            addr,
            static_dir,
            transcript_log,
            questioner,
            interpreter,
        } => {
            if let Some(q) = questioner {
                cfg.backends.questioner = q;
            }
            if let Some(i) = interpreter {
                cfg.backends.interpreter = i;
            }
            cfg.validate()?;
            let state = AppState::new(
                cfg.questioner()?,
                cfg.interpreter()?,
                cfg.session_config(),
                transcript_log.as_deref(),
            )
            .map_err(|e| CliError::io(transcript_log.as_deref().unwrap_or(".".as_ref()), e))?;
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| CliError::Pipeline(format!("cannot start runtime: {e}")))?;
            runtime
                .block_on(server::serve(Arc::new(state), ServeOptions { addr, static_dir }))
                .map_err(|e| CliError::Pipeline(format!("server: {e}")))?;
            return Ok(None);
        }
    };
    Ok(Some(summary))
}

fn set_forward_backend(cfg: &mut RunConfig, backend: Option<BackendKind>) {
    if let Some(b) = backend {
        cfg.backends.structurer = b;
        cfg.backends.ranker = b;
        cfg.backends.generator = b;
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(Some(summary)) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("report serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

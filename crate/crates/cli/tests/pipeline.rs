use std::path::Path;
use std::process::{Command, Output};

use elicit_cli::pipeline::{read_file, FunnelRecord};
use elicit_core::forward::{SimulatorExample, TrainingExample};
use elicit_core::{MetricsReport, ProfileView, StructuredProfile, Termination, Transcript};
use serde_json::Value;

fn elicit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elicit"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = elicit(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn fails_with(dir: &Path, args: &[&str], code: i32, class: &str) {
    let out = elicit(dir, args);
    assert_eq!(out.status.code(), Some(code), "{args:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap();
    let report: Value = serde_json::from_str(last).unwrap();
    assert_eq!(report["error"], class);
    assert_eq!(report["exit_code"], code);
}

#[test]
fn synth_forward_simulate_evaluate_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--count", "10", "--seed", "7"]);
    ok(d, &["forward", "--backend", "oracle"]);
    let profiles: Vec<StructuredProfile> = read_file(&d.join("out/profiles.jsonl")).unwrap();
    let rows: Vec<TrainingExample> = read_file(&d.join("out/questioner.jsonl")).unwrap();
    let sims: Vec<SimulatorExample> = read_file(&d.join("out/simulator.jsonl")).unwrap();
    let funnels: Vec<FunnelRecord> = read_file(&d.join("out/funnels.jsonl")).unwrap();
    let total: usize = profiles.iter().map(|p| p.len()).sum();
    assert_eq!((rows.len(), sims.len(), funnels.len()), (total, total, 10));

    ok(d, &["simulate", "--questioner", "oracle", "--simulator", "oracle", "--debug-log", "out/debug.jsonl"]);
    let transcripts: Vec<Transcript> = read_file(&d.join("out/transcripts.jsonl")).unwrap();
    assert_eq!(transcripts.len(), 10);
    assert!(transcripts.iter().all(|t| t.termination == Termination::ProfileMatch));
    let debug: Vec<Value> = read_file(&d.join("out/debug.jsonl")).unwrap();
    assert_eq!(debug.len(), 10);

    ok(d, &["evaluate"]);
    let report: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report.bleu_mean, 1.0);
    assert!(std::fs::read_to_string(d.join("out/report.csv")).unwrap().starts_with("metric,key,value\n"));

    ok(d, &["report", "--series", "oracle=out/report.json", "--out", "curves.svg"]);
    assert!(std::fs::read_to_string(d.join("curves.svg")).unwrap().contains("<polyline"));
}

#[test]
fn forward_accepts_raw_text_and_gen_data_composes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("raw.jsonl"),
        "{\"source_id\":\"a\",\"text\":\"Tone: dark\\nGenre: noir\\n\"}\n",
    )
    .unwrap();
    ok(d, &["forward", "--input", "raw.jsonl", "--output-dir", "fwd"]);
    let rows: Vec<TrainingExample> = read_file(&d.join("fwd/questioner.jsonl")).unwrap();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), [1, 0]);
    assert_eq!(rows[0].target_question, "What is your preferred Tone?");

    let summary = ok(d, &["gen-data", "--count", "4", "--output-dir", "gen"]);
    assert_eq!(summary["items"], 4);
    assert!(d.join("gen/questioner.jsonl").exists());
}

#[test]
fn exit_codes_per_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "parallelism = \"many\"\n").unwrap();
    fails_with(d, &["--config", "bad.toml", "synth"], 2, "config");
    fails_with(d, &["synth", "--count", "0"], 2, "config");
    fails_with(d, &["forward", "--input", "missing.jsonl"], 3, "io");
    std::fs::write(d.join("garbage.jsonl"), "{\"source_id\": 1}\n").unwrap();
    fails_with(d, &["forward", "--input", "garbage.jsonl"], 3, "io");

    ok(d, &["synth", "--count", "2"]);
    std::fs::write(
        d.join("llm.toml"),
        "[backends]\nranker = \"llm\"\n[llm]\nendpoint_url = \"http://127.0.0.1:9/v1\"\nmodel_name = \"m\"\nmax_retries = 0\nrequest_timeout_ms = 2000\n",
    )
    .unwrap();
    fails_with(d, &["--config", "llm.toml", "forward"], 4, "backend");

    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    fails_with(d, &["evaluate", "--transcripts", "empty.jsonl"], 5, "pipeline");
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let d = dir.path();
        ok(d, &["gen-data", "--count", "20", "--seed", "3"]);
        ok(d, &["simulate", "--questioner", "random", "--mode", "answers-only"]);
        ok(d, &["evaluate"]);
    }
    for name in ["profiles.jsonl", "questioner.jsonl", "simulator.jsonl", "funnels.jsonl", "transcripts.jsonl", "report.json", "report.csv"] {
        let a = std::fs::read(dirs[0].path().join("out").join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join("out").join(name)).unwrap();
        assert!(!a.is_empty() && a == b, "{name}");
    }
}

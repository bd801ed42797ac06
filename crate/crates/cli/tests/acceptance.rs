//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use elicit_cli::pipeline::{self, read_file, FunnelRecord};
use elicit_cli::config::Paths;
use elicit_cli::RunConfig;
use elicit_core::backends::oracle::GENERALITY_LEXICON;
use elicit_core::backends::{OracleAnswerer, OracleQuestioner, RandomTemplateQuestioner};
use elicit_core::forward::{corrupt, SimulatorExample, TrainingExample};
use elicit_core::metrics::{bleu, rouge, weighted_rank};
use elicit_core::session::run_batch;
use elicit_core::{
    evaluate_run, synth_profiles, Entry, ProfileView, SessionConfig, StructuredProfile,
    SyntheticProfileSpec, Termination, Transcript, UpdateMode,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn spec(seed: u64, vocabulary: Option<&[&str]>, min: usize, max: usize) -> SyntheticProfileSpec {
    let mut s = SyntheticProfileSpec {
        seed,
        min_tags: min,
        max_tags: max,
        ..Default::default()
    };
    match vocabulary {
        Some(v) => s.vocabulary = v.iter().map(|t| t.to_string()).collect(),
        None if max > s.vocabulary.len() => s.vocabulary = SyntheticProfileSpec::extended_vocabulary(),
        None => {}
    }
    s
}

fn oracle_batch(targets: &[StructuredProfile], cfg: &SessionConfig) -> Result<Vec<Transcript>, String> {
    let out = run_batch(&OracleQuestioner, &OracleAnswerer, targets, cfg, 4);
    ensure(out.failures.is_empty(), || format!("{} sessions failed", out.failures.len()))?;
    Ok(out.transcripts)
}

fn closed_loop() -> Check {
    let started = Instant::now();
    let targets = synth_profiles(&spec(101, None, 3, 9), 200).map_err(|e| e.to_string())?;
    let transcripts = oracle_batch(&targets, &SessionConfig::default())?;
    for (p, t) in targets.iter().zip(&transcripts) {
        ensure(t.termination == Termination::ProfileMatch && t.question_count == p.len(), || {
            format!("{}: {:?} after {} turns, m = {}", p.source_id(), t.termination, t.question_count, p.len())
        })?;
    }
    let r = evaluate_run(&transcripts).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(r.bleu_mean == 1.0 && r.rouge1_f_mean == 1.0 && r.rouge_l_f_mean == 1.0, || {
        format!("means {} {} {}", r.bleu_mean, r.rouge1_f_mean, r.rouge_l_f_mean)
    })?;
    ensure(elapsed.as_secs_f64() < 10.0, || format!("took {elapsed:?}"))?;
    Ok(format!("{} profiles, all matched in m turns, means 1.0, {:.2?}", targets.len(), elapsed))
}

fn brute_force_state(profile: &StructuredProfile, funnel: &[elicit_core::QaPair], t: usize) -> Vec<Entry> {
    profile
        .entries()
        .iter()
        .filter(|e| !funnel[t..].iter().any(|qa| qa.addressed.iter().any(|a| a == *e)))
        .cloned()
        .collect()
}

fn run_gen_data(dir: &Path, seed: u64, count: usize) -> Result<RunConfig, String> {
    let cfg = RunConfig {
        seed,
        synth: SyntheticProfileSpec { seed, ..Default::default() },
        paths: Paths { output_dir: dir.join("out"), ..Default::default() },
        ..Default::default()
    };
    pipeline::gen_data(&cfg, count).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn corruption_oracle() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = run_gen_data(dir.path(), 102, 150)?;
    let funnels: Vec<FunnelRecord> = read_file(&cfg.paths.output("funnels.jsonl")).map_err(|e| e.to_string())?;
    let mut states = 0;
    for f in &funnels {
        let n = f.funnel.len();
        for t in 0..=n {
            let got = corrupt(&f.profile, &f.funnel, t, UpdateMode::QuestionsAndAnswers).map_err(|e| e.to_string())?;
            ensure(got.entries == brute_force_state(&f.profile, &f.funnel, t), || format!("{} t={t}", f.source_id))?;
            states += 1;
        }
        let empty = corrupt(&f.profile, &f.funnel, 0, UpdateMode::AnswersOnly).map_err(|e| e.to_string())?;
        let full = corrupt(&f.profile, &f.funnel, n, UpdateMode::AnswersOnly).map_err(|e| e.to_string())?;
        ensure(empty.entries.is_empty() && empty.history.is_empty(), || format!("{} t=0 not empty", f.source_id))?;
        ensure(full.entries == f.profile.entries(), || format!("{} t=n not full", f.source_id))?;
    }
    Ok(format!("{} profiles, {states} states", funnels.len()))
}

fn dataset_emission() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = run_gen_data(dir.path(), 103, 100)?;
    let profiles: Vec<StructuredProfile> = read_file(&cfg.paths.output("profiles.jsonl")).map_err(|e| e.to_string())?;
    let funnels: Vec<FunnelRecord> = read_file(&cfg.paths.output("funnels.jsonl")).map_err(|e| e.to_string())?;
    let by_id: HashMap<&str, &FunnelRecord> = funnels.iter().map(|f| (f.source_id.as_str(), f)).collect();
    let text = std::fs::read_to_string(cfg.paths.output("questioner.jsonl")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    let expected_rows: usize = profiles.iter().map(|p| p.len()).sum();
    ensure(lines.len() == expected_rows, || format!("{} rows, expected {expected_rows}", lines.len()))?;
    for line in &lines {
        let row: TrainingExample = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let f = by_id[row.source_id.as_str()];
        let state = corrupt(&f.profile, &f.funnel, row.step, row.mode).map_err(|e| e.to_string())?;
        let rebuilt = TrainingExample {
            source_id: row.source_id.clone(),
            step: row.step,
            input_profile: state.to_profile(&row.source_id),
            history: state.history,
            mode: row.mode,
            target_question: f.funnel[row.step].question.clone(),
        };
        let bytes = serde_json::to_string(&rebuilt).map_err(|e| e.to_string())?;
        ensure(bytes == *line, || format!("{} step {} differs", row.source_id, row.step))?;
    }
    let sims: Vec<SimulatorExample> = read_file(&cfg.paths.output("simulator.jsonl")).map_err(|e| e.to_string())?;
    ensure(sims.len() == expected_rows, || format!("{} simulator rows", sims.len()))?;
    let bad = sims
        .iter()
        .filter(|s| s.target_addressed.is_empty() || !s.target_addressed.iter().all(|e| s.full_profile.entries().contains(e)))
        .count();
    ensure(bad == 0, || format!("{bad} simulator rows address entries outside the profile"))?;
    Ok(format!("{} questioner rows reproduced byte-for-byte, {} simulator rows subset-valid", lines.len(), sims.len()))
}

mod reference {
    //! Straightforward re-implementations used only as test oracles.

    use std::collections::HashMap;

    pub fn tokens(s: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in s.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    /// Matches by consuming reference n-grams one at a time, which clips
    /// counts without building count tables.
    fn consumed_matches(c: &[String], r: &[String], n: usize) -> usize {
        let mut pool: Vec<Option<&[String]>> = r.windows(n).map(Some).collect();
        let mut m = 0;
        for g in c.windows(n) {
            if let Some(slot) = pool.iter_mut().find(|s| **s == Some(g)) {
                *slot = None;
                m += 1;
            }
        }
        m
    }

    pub fn bleu(cand: &str, refr: &str) -> f64 {
        let (c, r) = (tokens(cand), tokens(refr));
        if c.is_empty() || r.is_empty() {
            return 0.0;
        }
        let order = 4.min(c.len()).min(r.len());
        let mut product = 1.0;
        for n in 1..=order {
            let total = (c.len() - n + 1) as f64;
            let m = consumed_matches(&c, &r, n);
            if m == 0 && n == 1 {
                return 0.0;
            }
            product *= if m == 0 { 0.1 / total } else { m as f64 / total };
        }
        let bp = if c.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / c.len() as f64).exp() };
        bp * product.powf(1.0 / order as f64)
    }

    fn lcs(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + lcs(a, b, i + 1, j + 1, memo)
        } else {
            lcs(a, b, i + 1, j, memo).max(lcs(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }

    fn f(m: usize, c: usize, r: usize) -> f64 {
        if m == 0 {
            0.0
        } else {
            let (p, rc) = (m as f64 / c as f64, m as f64 / r as f64);
            2.0 * p * rc / (p + rc)
        }
    }

    pub fn rouge(cand: &str, refr: &str) -> (f64, f64) {
        let (c, r) = (tokens(cand), tokens(refr));
        if c.is_empty() || r.is_empty() {
            return (0.0, 0.0);
        }
        let l = lcs(&c, &r, 0, 0, &mut HashMap::new());
        (f(consumed_matches(&c, &r, 1), c.len(), r.len()), f(l, c.len(), r.len()))
    }
}

const FIXTURE: [(&str, &str); 20] = [
    ("Genre: noir\nTone: dark", "Genre: noir\nTone: dark"),
    ("Genre: comedy", "Tone: bleak drama"),
    ("Genre: noir", "Genre: noir\nTone: dark"),
    ("Genre: noir\nTone: dark\nHumor: dry wit", "Genre: noir\nTone: dark"),
    ("the the the the", "the cat sat on the mat"),
    ("cat", "cat"),
    ("a b", "a b c"),
    ("Decade: 1980s", "Decade: 1990s"),
    ("Directors: Kubrick, Lynch", "Directors: Lynch, Kubrick"),
    ("Atmosphere: moody and tense", "Atmosphere: tense and moody"),
    ("Film Era: golden age Hollywood", "Film Era: new Hollywood"),
    ("Visual Style: bold colour palettes", "Visual Style: muted colour palettes\nTone: warm"),
    ("Special Effects: practical", "Special Effects: practical\nSpecial Effects: practical"),
    ("Humor: slapstick\nGenre: comedy\nDecade: 1920s", "Genre: comedy\nDecade: 1920s\nHumor: slapstick"),
    ("x y z", "z y x"),
    ("Genre: sci-fi, space opera", "Genre: sci fi space opera"),
    ("Tone: The user prefers classic tone", "Tone: The user enjoys bold tone"),
    ("one two three four five six", "one two three four five seven"),
    ("Genre: western\nDecade: 1960s\nDirectors: Leone", "Genre: western"),
    ("Cast: ensemble casts", "Pacing: slow burn\nCast: ensemble"),
];

fn metric_oracles() -> Check {
    let mut worst: f64 = 0.0;
    for (c, r) in FIXTURE {
        let b = bleu(c, r);
        let g = rouge(c, r);
        let (r1, rl) = reference::rouge(c, r);
        let diffs = [b - reference::bleu(c, r), g.rouge1_f - r1, g.rouge_l_f - rl];
        for d in diffs {
            worst = worst.max(d.abs());
        }
        ensure(diffs.iter().all(|d| d.abs() <= 1e-9), || format!("{c:?} vs {r:?}: {diffs:?}"))?;
    }
    let id = FIXTURE[0].0;
    let g = rouge(id, id);
    ensure(bleu(id, id) == 1.0 && g.rouge1_f == 1.0 && g.rouge_l_f == 1.0, || "identity not exactly 1".into())?;
    let (c, r) = FIXTURE[1];
    let g = rouge(c, r);
    ensure(bleu(c, r) == 0.0 && g.rouge1_f == 0.0 && g.rouge_l_f == 0.0, || "zero overlap not exactly 0".into())?;
    Ok(format!("{} pairs, max deviation {worst:.1e}", FIXTURE.len()))
}

fn funnel_statistic() -> Check {
    let targets = synth_profiles(&spec(105, Some(&GENERALITY_LEXICON), 3, 9), 300).map_err(|e| e.to_string())?;
    let transcripts = oracle_batch(&targets, &SessionConfig::default())?;
    let wr = GENERALITY_LEXICON
        .iter()
        .map(|c| weighted_rank(&transcripts, c).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    ensure(wr[0] == 1.0, || format!("WR({}) = {}", GENERALITY_LEXICON[0], wr[0]))?;
    ensure(wr.windows(2).all(|w| w[0] < w[1]), || format!("not strictly increasing: {wr:?}"))?;
    Ok(wr.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" < "))
}

fn history_ablation() -> Check {
    let s = spec(106, None, 3, 9);
    let targets = synth_profiles(&s, 100).map_err(|e| e.to_string())?;
    let questioner = RandomTemplateQuestioner { vocabulary: s.vocabulary.clone() };
    let run = |mode| {
        let cfg = SessionConfig::default().with_mode(mode).with_seed(106);
        let out = run_batch(&questioner, &OracleAnswerer, &targets, &cfg, 4);
        ensure(out.failures.is_empty(), || format!("{} sessions failed", out.failures.len()))?;
        evaluate_run(&out.transcripts).map_err(|e| e.to_string())
    };
    let qa = run(UpdateMode::QuestionsAndAnswers)?;
    let ao = run(UpdateMode::AnswersOnly)?;
    ensure(qa.repetition_rate == 0.0, || format!("Q+A repetition {}", qa.repetition_rate))?;
    ensure(ao.repetition_rate > 0.2, || format!("answers-only repetition {}", ao.repetition_rate))?;
    ensure(qa.rouge1_f_mean > ao.rouge1_f_mean, || {
        format!("ROUGE-1 Q+A {} vs answers-only {}", qa.rouge1_f_mean, ao.rouge1_f_mean)
    })?;
    Ok(format!(
        "repetition {:.3} vs {:.3}, ROUGE-1 {:.3} vs {:.3} (Q+A vs answers-only)",
        qa.repetition_rate, ao.repetition_rate, qa.rouge1_f_mean, ao.rouge1_f_mean
    ))
}

fn budget_behavior() -> Check {
    let targets = synth_profiles(&spec(107, None, 3, 9), 100).map_err(|e| e.to_string())?;
    let transcripts = oracle_batch(&targets, &SessionConfig::default())?;
    let batch = evaluate_run(&transcripts).map_err(|e| e.to_string())?;
    let curve: Vec<f64> = batch.per_position_scores.iter().map(|p| p.rouge1_f).collect();
    ensure(curve.windows(2).all(|w| w[0] <= w[1]), || format!("batch curve decreases: {curve:?}"))?;
    for t in &transcripts {
        let r = evaluate_run(std::slice::from_ref(t)).map_err(|e| e.to_string())?;
        let c: Vec<f64> = r.per_position_scores.iter().map(|p| p.rouge1_f).collect();
        let m = t.target.len();
        ensure(c.windows(2).all(|w| w[0] <= w[1]), || format!("{} curve decreases", t.source_id()))?;
        ensure(c.len() == m && c[m - 1] == 1.0, || format!("{} does not reach 1.0 at m = {m}", t.source_id()))?;
    }

    let big = synth_profiles(&spec(108, None, 12, 12), 20).map_err(|e| e.to_string())?;
    let cfg = SessionConfig::default().with_budget(10);
    let capped = oracle_batch(&big, &cfg)?;
    for t in &capped {
        let r = evaluate_run(std::slice::from_ref(t)).map_err(|e| e.to_string())?;
        ensure(
            t.termination == Termination::QuestionBudgetExhausted && t.question_count == 10 && r.rouge1_f_mean < 1.0,
            || format!("{}: {:?}, {} questions, ROUGE-1 {}", t.source_id(), t.termination, t.question_count, r.rouge1_f_mean),
        )?;
    }
    Ok(format!(
        "curves nondecreasing and at 1.0 by m; {} 12-tag targets exhausted T=10",
        capped.len()
    ))
}

fn reproducibility() -> Check {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for dir in &dirs {
        let cfg = run_gen_data(dir.path(), 109, 100)?;
        pipeline::simulate(&cfg, None).map_err(|e| e.to_string())?;
        pipeline::evaluate(&cfg).map_err(|e| e.to_string())?;
    }
    let names = ["profiles.jsonl", "questioner.jsonl", "simulator.jsonl", "funnels.jsonl", "transcripts.jsonl", "report.json"];
    for name in names {
        let a = std::fs::read(dirs[0].path().join("out").join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join("out").join(name)).map_err(|e| e.to_string())?;
        ensure(!a.is_empty() && a == b, || format!("{name} differs"))?;
    }
    Ok(format!("{} artifacts byte-identical", names.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("closed-loop reconstruction", closed_loop),
        ("corruption matches brute force", corruption_oracle),
        ("dataset emission", dataset_emission),
        ("metric oracles", metric_oracles),
        ("funnel weighted rank", funnel_statistic),
        ("question history ablation", history_ablation),
        ("budget behaviour", budget_behavior),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

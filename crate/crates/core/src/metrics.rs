//! Reconstruction scores and behavioural statistics over transcripts.
//!
//! Profiles are scored on their line-sorted flattening so that two profiles
//! holding the same entries in a different order score identically.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{flatten_sorted, normalize, ProfileView};
use crate::session::Transcript;

/// Highest n-gram order used by [`bleu`].
pub const BLEU_MAX_ORDER: usize = 4;
/// Numerator used for an n-gram order with no matches (additive smoothing).
pub const BLEU_SMOOTHING_EPSILON: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no transcripts to evaluate")]
    NoTranscripts,
    #[error("transcripts contain no turns")]
    NoTurns,
    #[error("concept `{0}` is never addressed")]
    ConceptNotObserved(String),
    #[error("transcript {source_id} cannot be replayed: {detail}")]
    Replay { source_id: String, detail: String },
}

/// Lower-cases and splits on every non-alphanumeric run.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn clipped_matches(cand: &HashMap<&[String], usize>, reference: &HashMap<&[String], usize>) -> usize {
    cand.iter()
        .map(|(g, c)| (*c).min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Sentence-level BLEU over token lists.
///
/// Orders `1..=N` are combined with uniform weights, where `N` is
/// [`BLEU_MAX_ORDER`] capped by the length of either sequence. An order with
/// no clipped matches uses `epsilon / total` as its precision. No unigram
/// overlap, or an empty side, scores 0.
pub fn bleu_tokens(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let max_order = BLEU_MAX_ORDER.min(candidate.len()).min(reference.len());
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let total = candidate.len() - n + 1;
        let matched = clipped_matches(&ngram_counts(candidate, n), &ngram_counts(reference, n));
        if matched == 0 && n == 1 {
            return 0.0;
        }
        let precision = if matched == 0 {
            BLEU_SMOOTHING_EPSILON / total as f64
        } else {
            matched as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let geo_mean = (log_sum / max_order as f64).exp();
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    brevity * geo_mean
}

pub fn bleu(candidate: &str, reference: &str) -> f64 {
    bleu_tokens(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
}

fn f1(overlap: usize, cand_len: usize, ref_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_len as f64;
    let r = overlap as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-1 F1 (clipped unigram overlap) and ROUGE-L F1 (longest common
/// subsequence).
pub fn rouge_tokens(candidate: &[String], reference: &[String]) -> RougeScores {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScores {
            rouge1_f: 0.0,
            rouge_l_f: 0.0,
        };
    }
    let overlap = clipped_matches(&ngram_counts(candidate, 1), &ngram_counts(reference, 1));
    let lcs = lcs_len(candidate, reference);
    RougeScores {
        rouge1_f: f1(overlap, candidate.len(), reference.len()),
        rouge_l_f: f1(lcs, candidate.len(), reference.len()),
    }
}

pub fn rouge(candidate: &str, reference: &str) -> RougeScores {
    rouge_tokens(&tokenize(candidate), &tokenize(reference))
}

/// Scores of a reconstructed profile against its target.
pub fn score_profiles(reconstructed: &impl ProfileView, target: &impl ProfileView) -> (f64, RougeScores) {
    let cand = tokenize(&flatten_sorted(reconstructed));
    let reference = tokenize(&flatten_sorted(target));
    (bleu_tokens(&cand, &reference), rouge_tokens(&cand, &reference))
}

/// 1-based turn at which `concept` is first addressed, if ever.
fn first_position(t: &Transcript, concept: &str) -> Option<usize> {
    let key = normalize(concept);
    t.turns
        .iter()
        .position(|qa| qa.addressed.iter().any(|e| e.tag_key() == key))
        .map(|i| i + 1)
}

/// Expected 1-based position at which `concept` is first addressed:
/// `sum_i i * p(i)` with `p` the empirical distribution over transcripts
/// that address it at all.
pub fn weighted_rank(transcripts: &[Transcript], concept: &str) -> Result<f64, MetricsError> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for pos in transcripts.iter().filter_map(|t| first_position(t, concept)) {
        *counts.entry(pos).or_insert(0) += 1;
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(MetricsError::ConceptNotObserved(concept.to_string()));
    }
    Ok(counts
        .iter()
        .map(|(&i, &c)| i as f64 * (c as f64 / total as f64))
        .sum())
}

fn total_turns(transcripts: &[Transcript]) -> usize {
    transcripts.iter().map(|t| t.turns.len()).sum()
}

/// Share of turns answered with the no-preference sentinel.
pub fn unanswered_rate(transcripts: &[Transcript]) -> Result<f64, MetricsError> {
    let total = total_turns(transcripts);
    if total == 0 {
        return Err(MetricsError::NoTurns);
    }
    let unanswered = transcripts
        .iter()
        .flat_map(|t| &t.turns)
        .filter(|qa| qa.is_no_preference())
        .count();
    Ok(unanswered as f64 / total as f64)
}

/// Share of turns whose normalized question already appeared earlier in the
/// same transcript.
pub fn repetition_rate(transcripts: &[Transcript]) -> Result<f64, MetricsError> {
    let total = total_turns(transcripts);
    if total == 0 {
        return Err(MetricsError::NoTurns);
    }
    let repeats: usize = transcripts
        .iter()
        .map(|t| {
            let mut seen = HashSet::new();
            t.turns
                .iter()
                .filter(|qa| !seen.insert(normalize(&qa.question)))
                .count()
        })
        .sum();
    Ok(repeats as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionScore {
    pub position: usize,
    pub bleu: f64,
    pub rouge1_f: f64,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub transcripts: usize,
    pub match_rate: f64,
    pub mean_questions: f64,
    pub bleu_mean: f64,
    pub rouge1_f_mean: f64,
    #[serde(rename = "rougeL_f_mean")]
    pub rouge_l_f_mean: f64,
    pub unanswered_rate: f64,
    pub repetition_rate: f64,
    /// Mean scores of the state after each number of questions. Sessions
    /// that already ended contribute their final state.
    pub per_position_scores: Vec<PositionScore>,
    pub weighted_ranks: BTreeMap<String, f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Every tag addressed anywhere, spelled as first seen.
fn observed_concepts(transcripts: &[Transcript]) -> Vec<String> {
    let mut seen = HashSet::new();
    transcripts
        .iter()
        .flat_map(|t| &t.turns)
        .flat_map(|qa| &qa.addressed)
        .filter(|e| seen.insert(e.tag_key()))
        .map(|e| e.tag.clone())
        .collect()
}

pub fn evaluate_run(transcripts: &[Transcript]) -> Result<MetricsReport, MetricsError> {
    if transcripts.is_empty() {
        return Err(MetricsError::NoTranscripts);
    }
    let finals = transcripts
        .par_iter()
        .map(|t| score_profiles(&t.reconstructed, &t.target))
        .collect::<Vec<_>>();

    let longest = transcripts.iter().map(|t| t.turns.len()).max().unwrap_or(0);
    let curves = transcripts
        .par_iter()
        .map(|t| {
            (1..=longest)
                .map(|k| {
                    let state = t.prefix_state(k.min(t.turns.len())).map_err(|e| {
                        MetricsError::Replay {
                            source_id: t.source_id().to_string(),
                            detail: e.to_string(),
                        }
                    })?;
                    Ok(score_profiles(&state, &t.target))
                })
                .collect::<Result<Vec<_>, MetricsError>>()
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let per_position_scores = (0..longest)
        .map(|k| PositionScore {
            position: k + 1,
            bleu: mean(curves.iter().map(|c| c[k].0)),
            rouge1_f: mean(curves.iter().map(|c| c[k].1.rouge1_f)),
            rouge_l_f: mean(curves.iter().map(|c| c[k].1.rouge_l_f)),
        })
        .collect();

    let has_turns = total_turns(transcripts) > 0;
    let weighted_ranks = observed_concepts(transcripts)
        .into_iter()
        .map(|c| weighted_rank(transcripts, &c).map(|wr| (c, wr)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;

    Ok(MetricsReport {
        transcripts: transcripts.len(),
        match_rate: mean(transcripts.iter().map(|t| {
            f64::from(t.termination == crate::session::Termination::ProfileMatch)
        })),
        mean_questions: mean(transcripts.iter().map(|t| t.question_count as f64)),
        bleu_mean: mean(finals.iter().map(|s| s.0)),
        rouge1_f_mean: mean(finals.iter().map(|s| s.1.rouge1_f)),
        rouge_l_f_mean: mean(finals.iter().map(|s| s.1.rouge_l_f)),
        unanswered_rate: if has_turns { unanswered_rate(transcripts)? } else { 0.0 },
        repetition_rate: if has_turns { repetition_rate(transcripts)? } else { 0.0 },
        per_position_scores,
        weighted_ranks,
    })
}

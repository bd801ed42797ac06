//! Deterministic synthetic profiles for tests, demos and benchmarks.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::oracle::GENERALITY_LEXICON;
use crate::profile::{normalize, Entry, StructuredProfile};

/// Tags outside the generality lexicon, for vocabularies larger than nine.
pub const EXTRA_TAGS: [&str; 6] = ["Cast", "Language", "Pacing", "Runtime", "Setting", "Soundtrack"];

const PHRASES: [&str; 6] = [
    "prefers classic {tag}",
    "enjoys bold {tag}",
    "likes understated {tag}",
    "is drawn to experimental {tag}",
    "favours familiar {tag}",
    "avoids predictable {tag}",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("vocabulary contains duplicate tag `{0}`")]
    DuplicateTag(String),
    #[error("invalid tag range {min}..={max} for a vocabulary of {vocab}")]
    TagRange { min: usize, max: usize, vocab: usize },
    #[error("content pool for `{0}` is empty")]
    EmptyPool(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfileSpec {
    pub vocabulary: Vec<String>,
    pub min_tags: usize,
    pub max_tags: usize,
    /// Per-tag content sentences. Tags without a pool use generated phrases.
    pub content_pools: BTreeMap<String, Vec<String>>,
    pub seed: u64,
}

impl Default for SyntheticProfileSpec {
    fn default() -> Self {
        Self {
            vocabulary: GENERALITY_LEXICON.iter().map(|t| t.to_string()).collect(),
            min_tags: 3,
            max_tags: 9,
            content_pools: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl SyntheticProfileSpec {
    /// The generality lexicon followed by [`EXTRA_TAGS`].
    pub fn extended_vocabulary() -> Vec<String> {
        GENERALITY_LEXICON
            .iter()
            .chain(EXTRA_TAGS.iter())
            .map(|t| t.to_string())
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.vocabulary.is_empty() {
            return Err(SynthError::EmptyVocabulary);
        }
        let mut seen = std::collections::HashSet::new();
        for tag in &self.vocabulary {
            if !seen.insert(normalize(tag)) {
                return Err(SynthError::DuplicateTag(tag.clone()));
            }
        }
        if self.min_tags == 0 || self.min_tags > self.max_tags || self.max_tags > self.vocabulary.len() {
            return Err(SynthError::TagRange {
                min: self.min_tags,
                max: self.max_tags,
                vocab: self.vocabulary.len(),
            });
        }
        if let Some((tag, _)) = self.content_pools.iter().find(|(_, pool)| pool.is_empty()) {
            return Err(SynthError::EmptyPool(tag.clone()));
        }
        Ok(())
    }

    fn content(&self, tag: &str, rng: &mut ChaCha8Rng) -> String {
        match self.content_pools.get(tag) {
            Some(pool) => pool.choose(rng).expect("validated non-empty").clone(),
            None => {
                let phrase = PHRASES.choose(rng).expect("non-empty");
                format!("The user {}", phrase.replace("{tag}", &tag.to_lowercase()))
            }
        }
    }
}

/// Generates `count` profiles. The same spec always yields the same output.
pub fn synth_profiles(spec: &SyntheticProfileSpec, count: usize) -> Result<Vec<StructuredProfile>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let n = rng.random_range(spec.min_tags..=spec.max_tags);
        let mut tags: Vec<&String> = spec.vocabulary.choose_multiple(&mut rng, n).collect();
        tags.shuffle(&mut rng);
        let entries = tags
            .into_iter()
            .map(|t| Entry::new(t.clone(), spec.content(t, &mut rng)))
            .collect();
        let profile = StructuredProfile::new(format!("synth-{}-{i:05}", spec.seed), entries)
            .expect("validated vocabulary yields valid profiles");
        out.push(profile);
    }
    Ok(out)
}

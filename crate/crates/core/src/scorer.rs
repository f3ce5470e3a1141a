//! Entailment scorers: anything that maps a sentence pair to a probability
//! vector over the task's labels.
//!
//! Two implementations ship here. [`OverlapScorer`] is a lexical baseline
//! computed from the texts. [`ExternalScorer`] replays probabilities produced
//! offline by a neural model, looked up by pair id.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{CorpusError, Distribution, Label, PredictionRecord, TaskKind};
use crate::preprocess::tokenize;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer '{scorer}' has no score for pair '{pair_id}'")]
    MissingScore { scorer: String, pair_id: String },
    #[error("scorer '{scorer}' looks scores up by pair id, but none was given")]
    NoPairId { scorer: String },
    #[error("scorer '{scorer}' is a {found} scorer, expected {expected}")]
    TaskMismatch {
        scorer: String,
        expected: TaskKind,
        found: TaskKind,
    },
    #[error("invalid scorer configuration: {0}")]
    Config(String),
    #[error("duplicate score for pair '{pair_id}' in model '{model}'")]
    DuplicatePair { model: String, pair_id: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// What a scorer is asked to judge. `pair_id` is used by scorers that replay
/// stored predictions; text-based scorers ignore it.
#[derive(Debug, Clone, Copy)]
pub struct ScoreQuery<'a> {
    pub pair_id: Option<&'a str>,
    pub text_a: &'a str,
    pub text_b: &'a str,
}

impl<'a> ScoreQuery<'a> {
    pub fn new(pair_id: Option<&'a str>, text_a: &'a str, text_b: &'a str) -> Self {
        ScoreQuery {
            pair_id,
            text_a,
            text_b,
        }
    }
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    fn task(&self) -> TaskKind;
    /// Must be deterministic and return a point on the task's simplex.
    fn score(&self, query: &ScoreQuery<'_>) -> Result<Distribution, ScoreError>;

    fn expect_task(&self, expected: TaskKind) -> Result<(), ScoreError> {
        if self.task() == expected {
            Ok(())
        } else {
            Err(ScoreError::TaskMismatch {
                scorer: self.name().to_string(),
                expected,
                found: self.task(),
            })
        }
    }
}

pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// One token per line; blank lines and `#` comments ignored.
pub fn parse_stopwords(content: &str) -> HashSet<String> {
    content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>, CorpusError> {
    fs::read_to_string(path)
        .map(|c| parse_stopwords(&c))
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Debug, Clone)]
pub struct OverlapScorerConfig {
    pub temperature: f64,
    pub stopwords: HashSet<String>,
}

impl Default for OverlapScorerConfig {
    fn default() -> Self {
        OverlapScorerConfig {
            temperature: 1.0,
            stopwords: default_stopwords(),
        }
    }
}

/// Lowercased non-punctuation, non-stopword tokens.
pub fn content_terms(text: &str, stopwords: &HashSet<String>) -> HashSet<String> {
    tokenize(text)
        .tokens
        .into_iter()
        .filter(|t| !t.is_punctuation())
        .map(|t| t.text.to_lowercase())
        .filter(|t| !stopwords.contains(t))
        .collect()
}

/// Jaccard overlap; 1 when both sets are empty.
pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Probabilities from the Jaccard overlap of content-word sets.
///
/// RQE: `P(true) ∝ J^(1/T)`, `P(false) ∝ (1-J)^(1/T)`.
/// NLI: `P(entailment) ∝ J`, neutral and contradiction split `1-J` evenly.
pub fn overlap_score(a: &str, b: &str, task: TaskKind, config: &OverlapScorerConfig) -> Distribution {
    let j = jaccard(
        &content_terms(a, &config.stopwords),
        &content_terms(b, &config.stopwords),
    );
    match task {
        TaskKind::Rqe => {
            let inv_t = 1.0 / config.temperature;
            Distribution::from_weights([(Label::True, j.powf(inv_t)), (Label::False, (1.0 - j).powf(inv_t))])
        }
        TaskKind::Nli => Distribution::from_weights([
            (Label::Entailment, j),
            (Label::Neutral, (1.0 - j) * 0.5),
            (Label::Contradiction, (1.0 - j) * 0.5),
        ]),
    }
}

#[derive(Debug, Clone)]
pub struct OverlapScorer {
    name: String,
    task: TaskKind,
    config: OverlapScorerConfig,
}

impl OverlapScorer {
    pub fn new(task: TaskKind, config: OverlapScorerConfig) -> Result<Self, ScoreError> {
        if !(config.temperature > 0.0 && config.temperature.is_finite()) {
            return Err(ScoreError::Config(format!(
                "temperature must be positive and finite, got {}",
                config.temperature
            )));
        }
        Ok(OverlapScorer {
            name: format!("overlap-{task}"),
            task,
            config,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Scorer for OverlapScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn task(&self) -> TaskKind {
        self.task
    }

    fn score(&self, query: &ScoreQuery<'_>) -> Result<Distribution, ScoreError> {
        Ok(overlap_score(query.text_a, query.text_b, self.task, &self.config))
    }
}

/// Replays stored predictions of one model, keyed by pair id.
#[derive(Debug, Clone)]
pub struct ExternalScorer {
    name: String,
    task: TaskKind,
    scores: HashMap<String, Distribution>,
}

impl ExternalScorer {
    /// Keeps the records of `model_name` only.
    pub fn from_predictions(preds: &[PredictionRecord], model_name: &str, task: TaskKind) -> Result<Self, ScoreError> {
        let mut scores = HashMap::new();
        for rec in preds.iter().filter(|r| r.model_name == model_name) {
            let probs = rec
                .probs
                .clone()
                .validated(task)
                .map_err(|source| CorpusError::Prediction {
                    line: 0,
                    pair_id: rec.pair_id.clone(),
                    source,
                })?;
            if scores.insert(rec.pair_id.clone(), probs).is_some() {
                return Err(ScoreError::DuplicatePair {
                    model: model_name.to_string(),
                    pair_id: rec.pair_id.clone(),
                });
            }
        }
        Ok(ExternalScorer {
            name: model_name.to_string(),
            task,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Scorer over stored predictions.
pub fn external_scorer(
    preds: &[PredictionRecord],
    model_name: &str,
    task: TaskKind,
) -> Result<ExternalScorer, ScoreError> {
    ExternalScorer::from_predictions(preds, model_name, task)
}

impl Scorer for ExternalScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn task(&self) -> TaskKind {
        self.task
    }

    fn score(&self, query: &ScoreQuery<'_>) -> Result<Distribution, ScoreError> {
        let pair_id = query.pair_id.ok_or_else(|| ScoreError::NoPairId {
            scorer: self.name.clone(),
        })?;
        self.scores
            .get(pair_id)
            .cloned()
            .ok_or_else(|| ScoreError::MissingScore {
                scorer: self.name.clone(),
                pair_id: pair_id.to_string(),
            })
    }
}

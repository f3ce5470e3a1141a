//! Answer re-ranking.
//!
//! Each candidate answer is described by its Okapi BM25 score against the
//! question, aggregates of NLI scores over its declarative sentences,
//! aggregates of RQE scores over the sub-questions it contains, and a one-hot
//! of its source. A linear SVM trained by stochastic subgradient descent on
//! the hinge loss turns those features into a relevance score.
//!
//! BM25 uses the raw IDF `ln((N - n + 0.5) / (n + 0.5))`; it goes negative
//! for terms in more than half of the documents and is not clamped.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnswerCandidate, CorpusError, Label, LabeledSentencePair, Provenance, Question, TaskKind};
use crate::preprocess::{split_sentences, tokenize};
use crate::scorer::{ScoreError, ScoreQuery, Scorer};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("training set needs both relevant and irrelevant examples")]
    DegenerateTrainingSet,
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("answer '{answer_id}' refers to unknown question '{question_id}'")]
    UnknownQuestion { question_id: String, answer_id: String },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("model file: {0}")]
    ModelFormat(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RankError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(RankError::InvalidParams(format!(
                "k1 must be positive, got {}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RankError::InvalidParams(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Lowercased, punctuation-free terms used for BM25 on both sides.
pub fn terms(text: &str) -> Vec<String> {
    tokenize(text)
        .tokens
        .into_iter()
        .filter(|t| !t.is_punctuation())
        .map(|t| t.text.to_lowercase())
        .collect()
}

/// Document count, average length and document frequencies of a pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avgdl: f64,
    pub df: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_documents<D: AsRef<[String]>>(docs: &[D]) -> Self {
        let mut df = HashMap::new();
        let mut total = 0usize;
        for doc in docs {
            let doc = doc.as_ref();
            total += doc.len();
            let unique: BTreeSet<&String> = doc.iter().collect();
            for term in unique {
                *df.entry(term.clone()).or_insert(0) += 1;
            }
        }
        let n_docs = docs.len();
        CorpusStats {
            n_docs,
            avgdl: if n_docs == 0 { 0.0 } else { total as f64 / n_docs as f64 },
            df,
        }
    }

    pub fn from_answers(answers: &[AnswerCandidate]) -> Self {
        let docs: Vec<Vec<String>> = answers.iter().map(|a| terms(&a.text)).collect();
        Self::from_documents(&docs)
    }
}

pub fn idf(term: &str, stats: &CorpusStats) -> f64 {
    let n = stats.df.get(term).copied().unwrap_or(0) as f64;
    let total = stats.n_docs as f64;
    ((total - n + 0.5) / (n + 0.5)).ln()
}

/// Okapi BM25 of `doc` for `query`. Every query token counts, repeats
/// included.
pub fn bm25(query: &[String], doc: &[String], params: &Bm25Params, stats: &CorpusStats) -> f64 {
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for term in doc {
        *tf.entry(term.as_str()).or_insert(0) += 1;
    }
    let length_ratio = if stats.avgdl > 0.0 {
        doc.len() as f64 / stats.avgdl
    } else {
        1.0
    };
    let norm = params.k1 * (1.0 - params.b + params.b * length_ratio);
    query
        .iter()
        .map(|q| {
            let f = tf.get(q.as_str()).copied().unwrap_or(0) as f64;
            if f == 0.0 {
                0.0
            } else {
                idf(q, stats) * f * (params.k1 + 1.0) / (f + norm)
            }
        })
        .sum()
}

/// Sorted list of answer sources seen in training; one one-hot slot each.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceVocab(Vec<String>);

impl SourceVocab {
    pub fn from_answers(answers: &[AnswerCandidate]) -> Self {
        let set: BTreeSet<&str> = answers.iter().map(|a| a.source.as_str()).collect();
        SourceVocab(set.into_iter().map(String::from).collect())
    }

    pub fn new(sources: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = sources.into_iter().collect();
        SourceVocab(set.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Unknown sources map to the all-zero vector.
    pub fn one_hot(&self, source: &str) -> Vec<f64> {
        self.0.iter().map(|s| if s == source { 1.0 } else { 0.0 }).collect()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bm25: f64,
    pub nli_max_entail: f64,
    pub nli_mean_entail: f64,
    pub nli_frac_contradict: f64,
    pub rqe_max: f64,
    pub rqe_mean: f64,
    pub subq_count: usize,
    pub source_onehot: Vec<f64>,
}

const SCALAR_FEATURES: [&str; 7] = [
    "bm25",
    "nli_max_entail",
    "nli_mean_entail",
    "nli_frac_contradict",
    "rqe_max",
    "rqe_mean",
    "subq_count",
];

impl FeatureVector {
    pub fn names(vocab: &SourceVocab) -> Vec<String> {
        SCALAR_FEATURES
            .iter()
            .map(|s| s.to_string())
            .chain(vocab.names().iter().map(|s| format!("source={s}")))
            .collect()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.bm25,
            self.nli_max_entail,
            self.nli_mean_entail,
            self.nli_frac_contradict,
            self.rqe_max,
            self.rqe_mean,
            self.subq_count as f64,
        ];
        v.extend(&self.source_onehot);
        v
    }
}

/// Id under which an external model's score for one answer sentence is
/// looked up.
pub fn sentence_pair_id(question_id: &str, answer_id: &str, sentence: usize) -> String {
    format!("{question_id}::{answer_id}::{sentence}")
}

/// A sentence ending in `?`, ignoring trailing closing brackets and quotes,
/// as in "(What Causes Uveitis?)".
pub fn is_sub_question(sentence: &str) -> bool {
    sentence
        .trim_end()
        .trim_end_matches([')', ']', '}', '"', '\'', '\u{201D}', '\u{2019}'])
        .ends_with('?')
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn max(xs: &[f64]) -> f64 {
    xs.iter()
        .copied()
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
        .unwrap_or(0.0)
}

/// Features of one answer. Declarative sentences are scored by `nli` as
/// premise against the question as hypothesis; sub-questions are scored by
/// `rqe` with the user question as CHQ and the sub-question as FAQ.
pub fn extract_features(
    question: &Question,
    answer: &AnswerCandidate,
    nli: &dyn Scorer,
    rqe: &dyn Scorer,
    stats: &CorpusStats,
    params: &Bm25Params,
    vocab: &SourceVocab,
) -> Result<FeatureVector, RankError> {
    nli.expect_task(TaskKind::Nli)?;
    rqe.expect_task(TaskKind::Rqe)?;

    let mut entail = Vec::new();
    let mut contradicts = 0usize;
    let mut rqe_true = Vec::new();
    for (idx, sentence) in split_sentences(&answer.text).iter().enumerate() {
        let pair_id = sentence_pair_id(&question.question_id, &answer.answer_id, idx);
        if is_sub_question(sentence) {
            let probs = rqe.score(&ScoreQuery::new(Some(&pair_id), &question.text, sentence))?;
            rqe_true.push(probs.get(Label::True));
        } else {
            let probs = nli.score(&ScoreQuery::new(Some(&pair_id), sentence, &question.text))?;
            entail.push(probs.get(Label::Entailment));
            if probs.argmax(TaskKind::Nli) == Label::Contradiction {
                contradicts += 1;
            }
        }
    }

    Ok(FeatureVector {
        bm25: bm25(&terms(&question.text), &terms(&answer.text), params, stats),
        nli_max_entail: max(&entail),
        nli_mean_entail: mean(&entail),
        nli_frac_contradict: if entail.is_empty() {
            0.0
        } else {
            contradicts as f64 / entail.len() as f64
        },
        rqe_max: max(&rqe_true),
        rqe_mean: mean(&rqe_true),
        subq_count: rqe_true.len(),
        source_onehot: vocab.one_hot(&answer.source),
    })
}

/// The sentence pairs an external model has to score for these answers:
/// NLI pairs (answer sentence, question) and RQE pairs (question,
/// sub-question), with ids from [`sentence_pair_id`].
pub fn sentence_pairs(
    questions: &[Question],
    answers: &[AnswerCandidate],
) -> Result<(Vec<LabeledSentencePair>, Vec<LabeledSentencePair>), RankError> {
    let by_id = question_index(questions);
    let mut nli = Vec::new();
    let mut rqe = Vec::new();
    for answer in answers {
        let question = lookup(&by_id, answer)?;
        for (idx, sentence) in split_sentences(&answer.text).into_iter().enumerate() {
            let id = sentence_pair_id(&question.question_id, &answer.answer_id, idx);
            let (target, text_a, text_b) = if is_sub_question(&sentence) {
                (&mut rqe, question.text.clone(), sentence)
            } else {
                (&mut nli, sentence, question.text.clone())
            };
            target.push(LabeledSentencePair {
                id,
                group_id: None,
                text_a,
                text_b,
                label: None,
                provenance: Provenance::Original,
            });
        }
    }
    Ok((nli, rqe))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty on the weights (not the bias).
    pub regularization: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 0.1,
            regularization: 1e-3,
            seed: 0,
        }
    }
}

/// A linear decision function over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl LinearModel {
    /// A model that applies `weights` to raw (unstandardized) features.
    pub fn new(feature_names: Vec<String>, weights: Vec<f64>, bias: f64) -> Self {
        let dim = weights.len();
        LinearModel {
            feature_names,
            weights,
            bias,
            means: vec![0.0; dim],
            variances: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((v, m), var)| (v - m) / scale(*var))
            .collect()
    }

    /// `w · z + bias` where `z` is the standardized feature vector.
    pub fn decision(&self, x: &[f64]) -> Result<f64, RankError> {
        if x.len() != self.dim() {
            return Err(RankError::Dimension {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let z = self.standardize(x);
        Ok(dot(&self.weights, &z) + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<bool, RankError> {
        Ok(self.decision(x)? > 0.0)
    }
}

fn scale(variance: f64) -> f64 {
    if variance > 0.0 {
        variance.sqrt()
    } else {
        1.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains a linear SVM: L2-regularized hinge loss minimized by stochastic
/// subgradient descent with step `lr / (1 + lr * lambda * t)`. Features are
/// standardized with training means and variances, which are stored in the
/// model. Deterministic for a given seed.
pub fn train_linear(
    examples: &[(Vec<f64>, bool)],
    feature_names: Vec<String>,
    config: &TrainConfig,
) -> Result<LinearModel, RankError> {
    if config.epochs == 0 || !(config.learning_rate > 0.0) || !(config.regularization >= 0.0) {
        return Err(RankError::InvalidParams(format!(
            "need epochs > 0, learning_rate > 0, regularization >= 0; got {config:?}"
        )));
    }
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == examples.len() {
        return Err(RankError::DegenerateTrainingSet);
    }
    let dim = examples[0].0.len();
    if let Some((x, _)) = examples.iter().find(|(x, _)| x.len() != dim) {
        return Err(RankError::Dimension {
            expected: dim,
            found: x.len(),
        });
    }
    if feature_names.len() != dim {
        return Err(RankError::Dimension {
            expected: dim,
            found: feature_names.len(),
        });
    }

    let n = examples.len() as f64;
    let means: Vec<f64> = (0..dim)
        .map(|j| examples.iter().map(|(x, _)| x[j]).sum::<f64>() / n)
        .collect();
    let variances: Vec<f64> = (0..dim)
        .map(|j| examples.iter().map(|(x, _)| (x[j] - means[j]).powi(2)).sum::<f64>() / n)
        .collect();
    let mut model = LinearModel {
        feature_names,
        weights: vec![0.0; dim],
        bias: 0.0,
        means,
        variances,
    };
    let data: Vec<(Vec<f64>, f64)> = examples
        .iter()
        .map(|(x, y)| (model.standardize(x), if *y { 1.0 } else { -1.0 }))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            step += 1;
            let eta = config.learning_rate / (1.0 + config.learning_rate * config.regularization * step as f64);
            let (x, y) = &data[i];
            let margin = y * (dot(&model.weights, x) + model.bias);
            let shrink = (1.0 - eta * config.regularization).max(0.0);
            for w in &mut model.weights {
                *w *= shrink;
            }
            if margin < 1.0 {
                for (w, xj) in model.weights.iter_mut().zip(x) {
                    *w += eta * y * xj;
                }
                model.bias += eta * y;
            }
        }
    }
    Ok(model)
}

/// Fraction of examples whose predicted relevance matches the label.
pub fn classification_accuracy(model: &LinearModel, examples: &[(Vec<f64>, bool)]) -> Result<f64, RankError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (x, y) in examples {
        if model.predict(x)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// A trained re-ranker as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerModel {
    #[serde(flatten)]
    pub linear: LinearModel,
    pub source_vocab: SourceVocab,
    pub bm25: Bm25Params,
}

impl RankerModel {
    pub fn to_json(&self) -> Result<String, RankError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, RankError> {
        let model: RankerModel = serde_json::from_str(text)?;
        let dim = model.linear.dim();
        let expected = SCALAR_FEATURES.len() + model.source_vocab.len();
        for found in [
            model.linear.feature_names.len(),
            model.linear.means.len(),
            model.linear.variances.len(),
            expected,
        ] {
            if found != dim {
                return Err(RankError::Dimension { expected: dim, found });
            }
        }
        model.bm25.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, RankError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn question_index(questions: &[Question]) -> HashMap<&str, &Question> {
    questions.iter().map(|q| (q.question_id.as_str(), q)).collect()
}

fn lookup<'a>(by_id: &HashMap<&str, &'a Question>, answer: &AnswerCandidate) -> Result<&'a Question, RankError> {
    by_id
        .get(answer.question_id.as_str())
        .copied()
        .ok_or_else(|| RankError::UnknownQuestion {
            question_id: answer.question_id.clone(),
            answer_id: answer.answer_id.clone(),
        })
}

/// Feature vectors for every answer, with BM25 statistics over the whole
/// answer pool.
pub fn featurize(
    questions: &[Question],
    answers: &[AnswerCandidate],
    nli: &dyn Scorer,
    rqe: &dyn Scorer,
    params: &Bm25Params,
    vocab: &SourceVocab,
) -> Result<Vec<FeatureVector>, RankError> {
    let by_id = question_index(questions);
    let stats = CorpusStats::from_answers(answers);
    answers
        .iter()
        .map(|a| extract_features(lookup(&by_id, a)?, a, nli, rqe, &stats, params, vocab))
        .collect()
}

/// Trains a re-ranker on the answers that carry a relevance label.
pub fn train_ranker(
    questions: &[Question],
    answers: &[AnswerCandidate],
    nli: &dyn Scorer,
    rqe: &dyn Scorer,
    params: &Bm25Params,
    config: &TrainConfig,
) -> Result<RankerModel, RankError> {
    params.validate()?;
    let vocab = SourceVocab::from_answers(answers);
    let features = featurize(questions, answers, nli, rqe, params, &vocab)?;
    let examples: Vec<(Vec<f64>, bool)> = features
        .iter()
        .zip(answers)
        .filter_map(|(f, a)| a.relevance.map(|r| (f.to_vec(), r)))
        .collect();
    let linear = train_linear(&examples, FeatureVector::names(&vocab), config)?;
    Ok(RankerModel {
        linear,
        source_vocab: vocab,
        bm25: *params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub answer_id: String,
    pub score: f64,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub question_id: String,
    pub ranking: Vec<RankedAnswer>,
}

/// Orders answers by descending decision score; ties go to the smaller
/// `rank_hint` (answers without one last), then the smaller answer id.
pub fn order_answers(answers: &[&AnswerCandidate], scores: &[f64]) -> Vec<RankedAnswer> {
    let mut idx: Vec<usize> = (0..answers.len()).collect();
    idx.sort_by(|&i, &j| {
        scores[j]
            .total_cmp(&scores[i])
            .then_with(|| match (answers[i].rank_hint, answers[j].rank_hint) {
                (Some(a), Some(b)) => a.cmp(&b),
                (Some(_), None) => Ordering::Less,
                (None, Some(_)) => Ordering::Greater,
                (None, None) => Ordering::Equal,
            })
            .then_with(|| answers[i].answer_id.cmp(&answers[j].answer_id))
    });
    idx.into_iter()
        .map(|i| RankedAnswer {
            answer_id: answers[i].answer_id.clone(),
            score: scores[i],
            relevant: scores[i] > 0.0,
        })
        .collect()
}

/// Ranks one question's answers. `stats` should describe the retrieval pool
/// the answers come from.
pub fn rank_answers(
    question: &Question,
    answers: &[&AnswerCandidate],
    model: &RankerModel,
    nli: &dyn Scorer,
    rqe: &dyn Scorer,
    stats: &CorpusStats,
) -> Result<Vec<RankedAnswer>, RankError> {
    let scores = answers
        .iter()
        .map(|a| {
            let f = extract_features(question, a, nli, rqe, stats, &model.bm25, &model.source_vocab)?;
            model.linear.decision(&f.to_vec())
        })
        .collect::<Result<Vec<f64>, RankError>>()?;
    Ok(order_answers(answers, &scores))
}

/// Ranks every question's answers, questions in input order.
pub fn rank_all(
    questions: &[Question],
    answers: &[AnswerCandidate],
    model: &RankerModel,
    nli: &dyn Scorer,
    rqe: &dyn Scorer,
) -> Result<Vec<RankedList>, RankError> {
    let by_id = question_index(questions);
    for a in answers {
        lookup(&by_id, a)?;
    }
    let stats = CorpusStats::from_answers(answers);
    questions
        .iter()
        .map(|q| {
            let own: Vec<&AnswerCandidate> = answers.iter().filter(|a| a.question_id == q.question_id).collect();
            Ok(RankedList {
                question_id: q.question_id.clone(),
                ranking: rank_answers(q, &own, model, nli, rqe, &stats)?,
            })
        })
        .collect()
}

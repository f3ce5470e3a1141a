//! Domain types and the flat-file formats shared by every pipeline stage.
//!
//! Canonical storage is JSONL with named fields. Sentence pairs are also
//! accepted as TSV (`id, group_id, text_a, text_b, label`), and the
//! abbreviation gazetteer is a two-column TSV without a header.
//!
//! All span offsets are Unicode scalar indices, never byte offsets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::preprocess::tokenize;

/// Maximum tolerated distance of a probability vector's sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown label '{label}' for task {task}")]
    UnknownLabel { line: usize, label: String, task: TaskKind },
    #[error("line {line}: record '{id}': {message}")]
    Invariant { line: usize, id: String, message: String },
    #[error("line {line}: duplicate id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: prediction for '{pair_id}': {source}")]
    Prediction {
        line: usize,
        pair_id: String,
        #[source]
        source: SimplexError,
    },
    #[error("line {line}: duplicate prediction for ('{pair_id}', '{model_name}')")]
    DuplicatePrediction {
        line: usize,
        pair_id: String,
        model_name: String,
    },
    #[error("line {line}: malformed gazetteer line: expected 2 tab-separated columns, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("line {line}: empty abbreviation")]
    EmptyAbbreviation { line: usize },
    #[error("annotation on '{pair_id}' side {side}: span out of bounds [{start}, {end}) for text of length {len}")]
    SpanOutOfBounds {
        pair_id: String,
        side: Side,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("annotation on '{pair_id}' side {side}: surface mismatch, expected '{expected}', text has '{found}'")]
    SurfaceMismatch {
        pair_id: String,
        side: Side,
        expected: String,
        found: String,
    },
    #[error("annotation on '{pair_id}' side {side}: overlapping spans [{first_start}, {first_end}) and [{second_start}, {second_end})")]
    Overlap {
        pair_id: String,
        side: Side,
        first_start: usize,
        first_end: usize,
        second_start: usize,
        second_end: usize,
    },
    #[error("annotation references unknown pair '{pair_id}'")]
    UnknownPair { pair_id: String },
    #[error("line {line}: duplicate answer ('{question_id}', '{answer_id}')")]
    DuplicateAnswer {
        line: usize,
        question_id: String,
        answer_id: String,
    },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Ways a probability vector can fail to be a point on the task's simplex.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexError {
    #[error("label set mismatch: expected {{{expected}}}, found {{{found}}}")]
    LabelSet { expected: String, found: String },
    #[error("probability {value} for '{label}' outside [0, 1]")]
    OutOfRange { label: Label, value: f64 },
    #[error("simplex violation: probabilities sum to {sum}")]
    Sum { sum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Nli,
    Rqe,
}

impl TaskKind {
    /// Labels of the task in canonical order.
    pub fn labels(self) -> &'static [Label] {
        match self {
            TaskKind::Nli => &[Label::Entailment, Label::Neutral, Label::Contradiction],
            TaskKind::Rqe => &[Label::True, Label::False],
        }
    }

    pub fn accepts(self, label: Label) -> bool {
        self.labels().contains(&label)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Nli => "nli",
            TaskKind::Rqe => "rqe",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nli" => Ok(TaskKind::Nli),
            "rqe" => Ok(TaskKind::Rqe),
            other => Err(format!("unknown task '{other}' (expected nli or rqe)")),
        }
    }
}

/// Union of the NLI and RQE label sets. Which labels are legal depends on
/// the [`TaskKind`] a dataset is loaded for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Entailment,
    Neutral,
    Contradiction,
    True,
    False,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Neutral => "neutral",
            Label::Contradiction => "contradiction",
            Label::True => "true",
            Label::False => "false",
        }
    }

    /// Parses a label name case-insensitively and checks it against the task.
    pub fn parse_for(task: TaskKind, raw: &str) -> Option<Label> {
        raw.trim().parse::<Label>().ok().filter(|label| task.accepts(*label))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "entailment" => Ok(Label::Entailment),
            "neutral" => Ok(Label::Neutral),
            "contradiction" => Ok(Label::Contradiction),
            "true" => Ok(Label::True),
            "false" => Ok(Label::False),
            _ => Err(format!("unknown label '{s}'")),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawLabel::deserialize(deserializer)?;
        raw.as_text().parse().map_err(serde::de::Error::custom)
    }
}

/// A label as it appears on disk: RQE dumps sometimes carry JSON booleans.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Text(String),
    Flag(bool),
}

impl RawLabel {
    fn as_text(&self) -> String {
        match self {
            RawLabel::Text(s) => s.clone(),
            RawLabel::Flag(b) => b.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Original,
    UmlsAugmented,
    Paraphrase,
    Qqp,
}

/// A premise/hypothesis (NLI) or CHQ/FAQ (RQE) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabeledSentencePair {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    pub text_a: String,
    pub text_b: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub provenance: Provenance,
}

impl LabeledSentencePair {
    pub fn text(&self, side: Side) -> &str {
        match side {
            Side::A => &self.text_a,
            Side::B => &self.text_b,
        }
    }

    pub fn text_mut(&mut self, side: Side) -> &mut String {
        match side {
            Side::A => &mut self.text_a,
            Side::B => &mut self.text_b,
        }
    }

    fn check(&self, task: TaskKind) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.text_a.trim().is_empty() {
            return Err("text_a is empty".into());
        }
        if self.text_b.trim().is_empty() {
            return Err("text_b is empty".into());
        }
        if let Some(label) = self.label {
            if !task.accepts(label) {
                return Err(format!("label '{label}' not in the {task} label set"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    id: String,
    #[serde(default)]
    group_id: Option<String>,
    text_a: String,
    text_b: String,
    #[serde(default)]
    label: Option<RawLabel>,
    #[serde(default)]
    provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFormat {
    Jsonl,
    Tsv,
}

impl FromStr for PairFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(PairFormat::Jsonl),
            "tsv" => Ok(PairFormat::Tsv),
            other => Err(format!("unknown pair format '{other}' (expected jsonl or tsv)")),
        }
    }
}

impl PairFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> PairFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => PairFormat::Tsv,
            _ => PairFormat::Jsonl,
        }
    }
}

/// A probability vector keyed by label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(BTreeMap<Label, f64>);

impl Distribution {
    /// Checks the vector against the task's simplex and renormalizes away
    /// float noise within [`SIMPLEX_TOLERANCE`].
    pub fn validated(self, task: TaskKind) -> Result<Distribution, SimplexError> {
        let expected: BTreeSet<Label> = task.labels().iter().copied().collect();
        let found: BTreeSet<Label> = self.0.keys().copied().collect();
        if expected != found {
            let names = |set: &BTreeSet<Label>| set.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", ");
            return Err(SimplexError::LabelSet {
                expected: names(&expected),
                found: names(&found),
            });
        }
        for (&label, &value) in &self.0 {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimplexError::OutOfRange { label, value });
            }
        }
        let sum: f64 = self.0.values().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(SimplexError::Sum { sum });
        }
        Ok(Distribution(self.0.into_iter().map(|(l, p)| (l, p / sum)).collect()))
    }

    /// Builds a distribution from unnormalized non-negative weights.
    pub fn from_weights(weights: impl IntoIterator<Item = (Label, f64)>) -> Distribution {
        let weights: BTreeMap<Label, f64> = weights.into_iter().collect();
        let sum: f64 = weights.values().sum();
        Distribution(weights.into_iter().map(|(l, w)| (l, w / sum)).collect())
    }

    pub fn get(&self, label: Label) -> f64 {
        self.0.get(&label).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, f64)> + '_ {
        self.0.iter().map(|(l, p)| (*l, *p))
    }

    pub fn sum(&self) -> f64 {
        self.0.values().sum()
    }

    /// Most probable label; ties go to the label listed first for the task.
    pub fn argmax(&self, task: TaskKind) -> Label {
        let mut best = task.labels()[0];
        for &label in task.labels() {
            if self.get(label) > self.get(best) {
                best = label;
            }
        }
        best
    }
}

impl FromIterator<(Label, f64)> for Distribution {
    fn from_iter<I: IntoIterator<Item = (Label, f64)>>(iter: I) -> Self {
        Distribution(iter.into_iter().collect())
    }
}

/// One model's probability vector for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: String,
    pub model_name: String,
    pub probs: Distribution,
}

/// A hard label for one pair, as written by the constrain and ensemble stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub pair_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GazetteerEntry {
    pub abbreviation: String,
    pub expansion: String,
}

/// Ordered multimap from abbreviation to expansions. Lookups are
/// case-insensitive on the abbreviation and return the first entry in file
/// order.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    first_by_key: HashMap<String, usize>,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry. Returns `false` (and ignores the entry) when the
    /// abbreviation is blank.
    pub fn push(&mut self, abbreviation: &str, expansion: &str) -> bool {
        let abbreviation = abbreviation.trim();
        if abbreviation.is_empty() {
            return false;
        }
        let idx = self.entries.len();
        self.first_by_key.entry(abbreviation.to_uppercase()).or_insert(idx);
        self.entries.push(GazetteerEntry {
            abbreviation: abbreviation.to_string(),
            expansion: expansion.trim().to_string(),
        });
        true
    }

    pub fn entries(&self) -> &[GazetteerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, token: &str) -> Option<&str> {
        self.first_by_key
            .get(&token.to_uppercase())
            .map(|&idx| self.entries[idx].expansion.as_str())
    }

    /// All expansions for an abbreviation, in file order.
    pub fn expansions<'a>(&'a self, token: &str) -> impl Iterator<Item = &'a str> + 'a {
        let key = token.to_uppercase();
        self.entries
            .iter()
            .filter(move |e| e.abbreviation.to_uppercase() == key)
            .map(|e| e.expansion.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A => "a",
            Side::B => "b",
        })
    }
}

/// A recognized medical concept: a half-open character span on one side of a
/// pair with its canonical name and semantic type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptAnnotation {
    pub pair_id: String,
    pub side: Side,
    pub span_start: usize,
    pub span_end: usize,
    pub surface: String,
    pub canonical_name: String,
    pub concept_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerCandidate {
    pub question_id: String,
    pub answer_id: String,
    pub text: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_hint: Option<i64>,
}

/// A user question whose candidate answers are re-ranked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub question_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingDatasetStats {
    pub question_count: usize,
    pub avg_answer_count: f64,
    /// Mean tokens per answer.
    pub avg_answer_length: f64,
}

/// Number of Unicode scalar values in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Substring by half-open Unicode scalar range; `None` when out of bounds.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let from = indices.nth(start)?;
    let to = if end == start {
        from
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[from..to])
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))
}

/// Non-blank lines with 1-based line numbers.
fn numbered_lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_jsonl<T: DeserializeOwned>(content: &str) -> Result<Vec<(usize, T)>, CorpusError> {
    numbered_lines(content)
        .map(|(line, text)| {
            serde_json::from_str(text)
                .map(|value| (line, value))
                .map_err(|e| CorpusError::Parse {
                    line,
                    message: e.to_string(),
                })
        })
        .collect()
}

fn write_jsonl<W: Write, T: Serialize>(writer: W, records: &[T]) -> io::Result<()> {
    let mut out = BufWriter::new(writer);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn save_with<F>(path: &Path, write: F) -> Result<(), CorpusError>
where
    F: FnOnce(fs::File) -> io::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    write(file).map_err(|e| CorpusError::io(path, e))
}

/// Loads sentence pairs, validating every record against the task.
pub fn load_pairs(path: &Path, task: TaskKind, format: PairFormat) -> Result<Vec<LabeledSentencePair>, CorpusError> {
    let content = read_text(path)?;
    parse_pairs(&content, task, format)
}

pub fn parse_pairs(content: &str, task: TaskKind, format: PairFormat) -> Result<Vec<LabeledSentencePair>, CorpusError> {
    let raw = match format {
        PairFormat::Jsonl => parse_jsonl::<RawPair>(content)?,
        PairFormat::Tsv => parse_tsv_pairs(content)?,
    };
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(raw.len());
    for (line, record) in raw {
        let label = match &record.label {
            None => None,
            Some(raw_label) => {
                let text = raw_label.as_text();
                match Label::parse_for(task, &text) {
                    Some(label) => Some(label),
                    None => {
                        return Err(CorpusError::UnknownLabel {
                            line,
                            label: text,
                            task,
                        })
                    }
                }
            }
        };
        let pair = LabeledSentencePair {
            id: record.id,
            group_id: record.group_id.filter(|g| !g.is_empty()),
            text_a: record.text_a,
            text_b: record.text_b,
            label,
            provenance: record.provenance.unwrap_or_default(),
        };
        pair.check(task).map_err(|message| CorpusError::Invariant {
            line,
            id: pair.id.clone(),
            message,
        })?;
        if !seen.insert(pair.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: pair.id });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

fn parse_tsv_pairs(content: &str) -> Result<Vec<(usize, RawPair)>, CorpusError> {
    let mut out = Vec::new();
    for (line, text) in numbered_lines(content) {
        let cols: Vec<&str> = text.split('\t').collect();
        if out.is_empty() && cols.first() == Some(&"id") && cols.get(2) == Some(&"text_a") {
            continue;
        }
        if cols.len() != 5 {
            return Err(CorpusError::Parse {
                line,
                message: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let optional = |s: &str| (!s.is_empty()).then(|| s.to_string());
        out.push((
            line,
            RawPair {
                id: cols[0].to_string(),
                group_id: optional(cols[1]),
                text_a: cols[2].to_string(),
                text_b: cols[3].to_string(),
                label: optional(cols[4]).map(RawLabel::Text),
                provenance: None,
            },
        ));
    }
    Ok(out)
}

pub fn write_pairs<W: Write>(writer: W, pairs: &[LabeledSentencePair]) -> io::Result<()> {
    write_jsonl(writer, pairs)
}

pub fn save_pairs(path: &Path, pairs: &[LabeledSentencePair]) -> Result<(), CorpusError> {
    save_with(path, |f| write_pairs(f, pairs))
}

/// Loads model predictions. Each probability vector must lie on the task's
/// simplex within [`SIMPLEX_TOLERANCE`] and is renormalized on load.
pub fn load_predictions(path: &Path, task: TaskKind) -> Result<Vec<PredictionRecord>, CorpusError> {
    parse_predictions(&read_text(path)?, task)
}

pub fn parse_predictions(content: &str, task: TaskKind) -> Result<Vec<PredictionRecord>, CorpusError> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (line, record) in parse_jsonl::<PredictionRecord>(content)? {
        let probs = record.probs.validated(task).map_err(|source| CorpusError::Prediction {
            line,
            pair_id: record.pair_id.clone(),
            source,
        })?;
        if !seen.insert((record.pair_id.clone(), record.model_name.clone())) {
            return Err(CorpusError::DuplicatePrediction {
                line,
                pair_id: record.pair_id,
                model_name: record.model_name,
            });
        }
        records.push(PredictionRecord { probs, ..record });
    }
    Ok(records)
}

pub fn write_predictions<W: Write>(writer: W, records: &[PredictionRecord]) -> io::Result<()> {
    write_jsonl(writer, records)
}

pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), CorpusError> {
    save_with(path, |f| write_predictions(f, records))
}

pub fn write_labels<W: Write>(writer: W, records: &[LabelRecord]) -> io::Result<()> {
    write_jsonl(writer, records)
}

/// Hard labels read from any of the shapes the pipeline produces.
#[derive(Debug, Clone, Default)]
pub struct LabelFile {
    /// The model name when the file is a prediction dump for a single model.
    pub model_name: Option<String>,
    pub labels: BTreeMap<String, Label>,
}

/// Reads hard labels from a label file (`pair_id`, `label`), a pairs file
/// (`id`, `label`), or a prediction file (argmax of `probs`).
pub fn load_label_file(path: &Path, task: TaskKind) -> Result<LabelFile, CorpusError> {
    parse_label_file(&read_text(path)?, task)
}

pub fn parse_label_file(content: &str, task: TaskKind) -> Result<LabelFile, CorpusError> {
    let mut out = LabelFile::default();
    let mut models = BTreeSet::new();
    for (line, value) in parse_jsonl::<serde_json::Value>(content)? {
        let parse_err = |message: String| CorpusError::Parse { line, message };
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err("record must be a JSON object".into()))?;
        let (pair_id, label) = if obj.contains_key("probs") {
            let record: PredictionRecord =
                serde_json::from_value(value.clone()).map_err(|e| parse_err(e.to_string()))?;
            let probs = record.probs.validated(task).map_err(|source| CorpusError::Prediction {
                line,
                pair_id: record.pair_id.clone(),
                source,
            })?;
            models.insert(record.model_name);
            (record.pair_id, probs.argmax(task))
        } else {
            let id = obj
                .get("pair_id")
                .or_else(|| obj.get("id"))
                .and_then(|v| v.as_str())
                .ok_or_else(|| parse_err("missing 'pair_id' or 'id'".into()))?
                .to_string();
            let raw: RawLabel = obj
                .get("label")
                .cloned()
                .map(serde_json::from_value)
                .transpose()
                .map_err(|e| parse_err(e.to_string()))?
                .ok_or_else(|| parse_err(format!("record '{id}' has no label")))?;
            let text = raw.as_text();
            let label = Label::parse_for(task, &text).ok_or(CorpusError::UnknownLabel {
                line,
                label: text,
                task,
            })?;
            (id, label)
        };
        if out.labels.insert(pair_id.clone(), label).is_some() {
            return Err(CorpusError::DuplicateId { line, id: pair_id });
        }
    }
    if models.len() == 1 {
        out.model_name = models.into_iter().next();
    }
    Ok(out)
}

/// Loads a gazetteer: `ABBREVIATION<TAB>EXPANSION` per line, no header.
pub fn load_gazetteer(path: &Path) -> Result<Gazetteer, CorpusError> {
    parse_gazetteer(&read_text(path)?)
}

pub fn parse_gazetteer(content: &str) -> Result<Gazetteer, CorpusError> {
    let mut gz = Gazetteer::new();
    for (line, text) in numbered_lines(content) {
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() != 2 || cols[1].trim().is_empty() {
            return Err(CorpusError::MalformedLine {
                line,
                found: cols.iter().filter(|c| !c.trim().is_empty()).count(),
            });
        }
        if !gz.push(cols[0], cols[1]) {
            return Err(CorpusError::EmptyAbbreviation { line });
        }
    }
    Ok(gz)
}

pub fn save_gazetteer(path: &Path, gz: &Gazetteer) -> Result<(), CorpusError> {
    save_with(path, |f| {
        let mut out = BufWriter::new(f);
        for e in gz.entries() {
            writeln!(out, "{}\t{}", e.abbreviation, e.expansion)?;
        }
        out.flush()
    })
}

/// Loads concept annotations and checks the invariants that need no source
/// text: non-empty spans, surface length equal to span length, and no overlap
/// between spans on the same side of a pair.
pub fn load_annotations(path: &Path) -> Result<Vec<ConceptAnnotation>, CorpusError> {
    parse_annotations(&read_text(path)?)
}

pub fn parse_annotations(content: &str) -> Result<Vec<ConceptAnnotation>, CorpusError> {
    let records = parse_jsonl::<ConceptAnnotation>(content)?;
    for (line, ann) in &records {
        if ann.span_start >= ann.span_end {
            return Err(CorpusError::Invariant {
                line: *line,
                id: ann.pair_id.clone(),
                message: format!("empty or inverted span [{}, {})", ann.span_start, ann.span_end),
            });
        }
        let surface_len = char_len(&ann.surface);
        if surface_len != ann.span_end - ann.span_start {
            return Err(CorpusError::SurfaceMismatch {
                pair_id: ann.pair_id.clone(),
                side: ann.side,
                expected: ann.surface.clone(),
                found: format!("a span of {} characters", ann.span_end - ann.span_start),
            });
        }
    }
    let annotations: Vec<ConceptAnnotation> = records.into_iter().map(|(_, a)| a).collect();
    check_overlaps(&annotations)?;
    Ok(annotations)
}

/// Fails on the first pair of overlapping spans sharing `(pair_id, side)`.
pub fn check_overlaps(annotations: &[ConceptAnnotation]) -> Result<(), CorpusError> {
    let mut by_key: BTreeMap<(&str, Side), Vec<&ConceptAnnotation>> = BTreeMap::new();
    for ann in annotations {
        by_key.entry((&ann.pair_id, ann.side)).or_default().push(ann);
    }
    for ((pair_id, side), mut spans) in by_key {
        spans.sort_by_key(|a| (a.span_start, a.span_end));
        for w in spans.windows(2) {
            if w[1].span_start < w[0].span_end {
                return Err(CorpusError::Overlap {
                    pair_id: pair_id.to_string(),
                    side,
                    first_start: w[0].span_start,
                    first_end: w[0].span_end,
                    second_start: w[1].span_start,
                    second_end: w[1].span_end,
                });
            }
        }
    }
    Ok(())
}

/// Cross-checks annotations against the texts they reference.
pub fn validate_annotations(
    annotations: &[ConceptAnnotation],
    pairs: &[LabeledSentencePair],
) -> Result<(), CorpusError> {
    let by_id: HashMap<&str, &LabeledSentencePair> = pairs.iter().map(|p| (p.id.as_str(), p)).collect();
    for ann in annotations {
        let pair = by_id
            .get(ann.pair_id.as_str())
            .ok_or_else(|| CorpusError::UnknownPair {
                pair_id: ann.pair_id.clone(),
            })?;
        check_span(ann, pair.text(ann.side))?;
    }
    check_overlaps(annotations)
}

pub(crate) fn check_span(ann: &ConceptAnnotation, text: &str) -> Result<(), CorpusError> {
    let len = char_len(text);
    let found = match char_slice(text, ann.span_start, ann.span_end) {
        Some(found) if ann.span_start < ann.span_end => found,
        _ => {
            return Err(CorpusError::SpanOutOfBounds {
                pair_id: ann.pair_id.clone(),
                side: ann.side,
                start: ann.span_start,
                end: ann.span_end,
                len,
            })
        }
    };
    if found != ann.surface {
        return Err(CorpusError::SurfaceMismatch {
            pair_id: ann.pair_id.clone(),
            side: ann.side,
            expected: ann.surface.clone(),
            found: found.to_string(),
        });
    }
    Ok(())
}

pub fn write_annotations<W: Write>(writer: W, annotations: &[ConceptAnnotation]) -> io::Result<()> {
    write_jsonl(writer, annotations)
}

pub fn save_annotations(path: &Path, annotations: &[ConceptAnnotation]) -> Result<(), CorpusError> {
    save_with(path, |f| write_annotations(f, annotations))
}

pub fn load_answers(path: &Path) -> Result<Vec<AnswerCandidate>, CorpusError> {
    parse_answers(&read_text(path)?)
}

pub fn parse_answers(content: &str) -> Result<Vec<AnswerCandidate>, CorpusError> {
    let mut seen = HashSet::new();
    let mut answers = Vec::new();
    for (line, answer) in parse_jsonl::<AnswerCandidate>(content)? {
        if !seen.insert((answer.question_id.clone(), answer.answer_id.clone())) {
            return Err(CorpusError::DuplicateAnswer {
                line,
                question_id: answer.question_id,
                answer_id: answer.answer_id,
            });
        }
        answers.push(answer);
    }
    Ok(answers)
}

pub fn write_answers<W: Write>(writer: W, answers: &[AnswerCandidate]) -> io::Result<()> {
    write_jsonl(writer, answers)
}

pub fn save_answers(path: &Path, answers: &[AnswerCandidate]) -> Result<(), CorpusError> {
    save_with(path, |f| write_answers(f, answers))
}

pub fn load_questions(path: &Path) -> Result<Vec<Question>, CorpusError> {
    parse_questions(&read_text(path)?)
}

pub fn parse_questions(content: &str) -> Result<Vec<Question>, CorpusError> {
    let mut seen = HashSet::new();
    let mut questions = Vec::new();
    for (line, q) in parse_jsonl::<Question>(content)? {
        if !seen.insert(q.question_id.clone()) {
            return Err(CorpusError::DuplicateId {
                line,
                id: q.question_id,
            });
        }
        questions.push(q);
    }
    Ok(questions)
}

pub fn write_questions<W: Write>(writer: W, questions: &[Question]) -> io::Result<()> {
    write_jsonl(writer, questions)
}

/// Question count, answers per question, and mean answer length in tokens.
pub fn dataset_stats(answers: &[AnswerCandidate]) -> RankingDatasetStats {
    let questions: HashSet<&str> = answers.iter().map(|a| a.question_id.as_str()).collect();
    if answers.is_empty() {
        return RankingDatasetStats {
            question_count: 0,
            avg_answer_count: 0.0,
            avg_answer_length: 0.0,
        };
    }
    let total_tokens: usize = answers.iter().map(|a| tokenize(&a.text).len()).sum();
    RankingDatasetStats {
        question_count: questions.len(),
        avg_answer_count: answers.len() as f64 / questions.len() as f64,
        avg_answer_length: total_tokens as f64 / answers.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nli_line(id: &str, label: &str) -> String {
        format!(r#"{{"id":"{id}","group_id":"g","text_a":"a","text_b":"b","label":"{label}"}}"#)
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse_pairs("", TaskKind::Nli, PairFormat::Jsonl).unwrap().is_empty());
        assert!(parse_pairs("\n\n", TaskKind::Rqe, PairFormat::Tsv).unwrap().is_empty());
    }

    #[test]
    fn rejects_label_from_other_task() {
        let err = parse_pairs(&nli_line("x", "true"), TaskKind::Nli, PairFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownLabel { line: 1, .. }), "{err}");
        let content = "p1\t\tq one\tq two\tentailment\n";
        let err = parse_pairs(content, TaskKind::Rqe, PairFormat::Tsv).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownLabel { .. }));
    }

    #[test]
    fn rqe_labels_accept_bool_and_case() {
        let content = concat!(
            r#"{"id":"1","text_a":"a","text_b":"b","label":true}"#,
            "\n",
            r#"{"id":"2","text_a":"a","text_b":"b","label":"False"}"#
        );
        let pairs = parse_pairs(content, TaskKind::Rqe, PairFormat::Jsonl).unwrap();
        assert_eq!(pairs[0].label, Some(Label::True));
        assert_eq!(pairs[1].label, Some(Label::False));
    }

    #[test]
    fn tsv_header_and_optional_columns() {
        let content = "id\tgroup_id\ttext_a\ttext_b\tlabel\nn1\tp1\tprem\thyp\tneutral\nn2\t\tprem\thyp\t\n";
        let pairs = parse_pairs(content, TaskKind::Nli, PairFormat::Tsv).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].group_id.as_deref(), Some("p1"));
        assert_eq!(pairs[1].group_id, None);
        assert_eq!(pairs[1].label, None);
    }

    #[test]
    fn blank_text_and_duplicate_id_rejected() {
        let blank = r#"{"id":"1","text_a":"  ","text_b":"b"}"#;
        assert!(matches!(
            parse_pairs(blank, TaskKind::Rqe, PairFormat::Jsonl),
            Err(CorpusError::Invariant { .. })
        ));
        let dup = format!("{}\n{}", nli_line("x", "neutral"), nli_line("x", "neutral"));
        assert!(matches!(
            parse_pairs(&dup, TaskKind::Nli, PairFormat::Jsonl),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn parse_error_reports_line() {
        let content = format!("{}\n{{not json\n", nli_line("x", "neutral"));
        match parse_pairs(&content, TaskKind::Nli, PairFormat::Jsonl) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prediction_vertex_accepted_and_overfull_rejected() {
        let ok = r#"{"pair_id":"p","model_name":"m","probs":{"entailment":1.0,"neutral":0.0,"contradiction":0.0}}"#;
        let recs = parse_predictions(ok, TaskKind::Nli).unwrap();
        assert_eq!(recs[0].probs.get(Label::Entailment), 1.0);

        let bad = r#"{"pair_id":"p","model_name":"m","probs":{"entailment":0.6,"neutral":0.6,"contradiction":0.0}}"#;
        let err = parse_predictions(bad, TaskKind::Nli).unwrap_err();
        assert!(err.to_string().contains("simplex violation"), "{err}");
    }

    #[test]
    fn prediction_noise_is_renormalized() {
        let noisy = r#"{"pair_id":"p","model_name":"m","probs":{"true":0.3000004,"false":0.7}}"#;
        let recs = parse_predictions(noisy, TaskKind::Rqe).unwrap();
        assert!((recs[0].probs.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prediction_label_set_and_duplicates() {
        let missing = r#"{"pair_id":"p","model_name":"m","probs":{"entailment":0.5,"neutral":0.5}}"#;
        assert!(matches!(
            parse_predictions(missing, TaskKind::Nli),
            Err(CorpusError::Prediction {
                source: SimplexError::LabelSet { .. },
                ..
            })
        ));
        let line = r#"{"pair_id":"p","model_name":"m","probs":{"true":0.5,"false":0.5}}"#;
        let dup = format!("{line}\n{line}");
        assert!(matches!(
            parse_predictions(&dup, TaskKind::Rqe),
            Err(CorpusError::DuplicatePrediction { line: 2, .. })
        ));
        // same pair, different model is fine
        let other = line.replace("\"m\"", "\"n\"");
        assert_eq!(
            parse_predictions(&format!("{line}\n{other}"), TaskKind::Rqe)
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn gazetteer_single_multi_and_empty() {
        let gz = parse_gazetteer("MICU\tMedical Intensive Care Unit\n").unwrap();
        assert_eq!(gz.len(), 1);
        assert_eq!(gz.lookup("micu"), Some("Medical Intensive Care Unit"));

        let gz = parse_gazetteer("PT\tPhysical Therapy\n\nPT\tPatient\n").unwrap();
        assert_eq!(gz.len(), 2);
        assert_eq!(gz.lookup("PT"), Some("Physical Therapy"));
        assert_eq!(gz.expansions("PT").collect::<Vec<_>>(), ["Physical Therapy", "Patient"]);

        assert!(parse_gazetteer("").unwrap().is_empty());
    }

    #[test]
    fn gazetteer_malformed() {
        assert!(matches!(
            parse_gazetteer("MICU Medical Intensive Care Unit\n"),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            parse_gazetteer("A\tb\tc\n"),
            Err(CorpusError::MalformedLine { .. })
        ));
        assert!(matches!(
            parse_gazetteer("ok\tfine\n \tsomething\n"),
            Err(CorpusError::EmptyAbbreviation { line: 2 })
        ));
    }

    fn ann(pair: &str, start: usize, end: usize, surface: &str) -> ConceptAnnotation {
        ConceptAnnotation {
            pair_id: pair.into(),
            side: Side::A,
            span_start: start,
            span_end: end,
            surface: surface.into(),
            canonical_name: "c".into(),
            concept_type: "t".into(),
        }
    }

    #[test]
    fn annotation_kartagener_accepted() {
        let text = "What is primary ciliary dyskinesia?";
        let pair = LabeledSentencePair {
            id: "q1".into(),
            group_id: None,
            text_a: text.into(),
            text_b: "Treatment for it?".into(),
            label: Some(Label::True),
            provenance: Provenance::Original,
        };
        let a = ConceptAnnotation {
            canonical_name: "kartaganer syndrome".into(),
            concept_type: "Disease or Syndrome".into(),
            ..ann("q1", 8, 34, "primary ciliary dyskinesia")
        };
        validate_annotations(&[a], &[pair]).unwrap();
    }

    #[test]
    fn annotation_bounds_touching_and_overlap() {
        let pair = LabeledSentencePair {
            id: "q".into(),
            group_id: None,
            text_a: "abcdef".into(),
            text_b: "x".into(),
            label: None,
            provenance: Provenance::Original,
        };
        let err = validate_annotations(&[ann("q", 4, 7, "efg")], std::slice::from_ref(&pair)).unwrap_err();
        assert!(err.to_string().contains("span out of bounds"), "{err}");

        let touching = [ann("q", 0, 3, "abc"), ann("q", 3, 6, "def")];
        validate_annotations(&touching, std::slice::from_ref(&pair)).unwrap();

        let overlapping = [ann("q", 0, 3, "abc"), ann("q", 2, 5, "cde")];
        assert!(matches!(
            validate_annotations(&overlapping, std::slice::from_ref(&pair)),
            Err(CorpusError::Overlap { .. })
        ));

        let mismatch = [ann("q", 0, 3, "abd")];
        assert!(matches!(
            validate_annotations(&mismatch, &[pair]),
            Err(CorpusError::SurfaceMismatch { .. })
        ));
    }

    #[test]
    fn char_slice_uses_scalar_offsets() {
        let text = "Größe über";
        assert_eq!(char_slice(text, 0, 5), Some("Größe"));
        assert_eq!(char_slice(text, 6, 10), Some("über"));
        assert_eq!(char_slice(text, 10, 10), Some(""));
        assert_eq!(char_slice(text, 6, 11), None);
    }

    fn answer(q: &str, a: &str, text: &str) -> AnswerCandidate {
        AnswerCandidate {
            question_id: q.into(),
            answer_id: a.into(),
            text: text.into(),
            source: "s".into(),
            relevance: None,
            rank_hint: None,
        }
    }

    #[test]
    fn stats_counts() {
        let zero = dataset_stats(&[]);
        assert_eq!(
            (zero.question_count, zero.avg_answer_count, zero.avg_answer_length),
            (0, 0.0, 0.0)
        );

        let mut answers: Vec<_> = (0..3).map(|i| answer("q1", &i.to_string(), "one two")).collect();
        answers.extend((0..5).map(|i| answer("q2", &i.to_string(), "one two three four")));
        let stats = dataset_stats(&answers);
        assert_eq!(stats.question_count, 2);
        assert_eq!(stats.avg_answer_count, 4.0);
        assert_eq!(stats.avg_answer_length, (3.0 * 2.0 + 5.0 * 4.0) / 8.0);
    }

    #[test]
    fn duplicate_answer_rejected() {
        let line = r#"{"question_id":"q","answer_id":"a","text":"t","source":"s"}"#;
        assert!(matches!(
            parse_answers(&format!("{line}\n{line}")),
            Err(CorpusError::DuplicateAnswer { line: 2, .. })
        ));
    }

    #[test]
    fn label_file_shapes() {
        let labels = r#"{"pair_id":"a","label":"neutral"}"#;
        let pairs = r#"{"id":"b","text_a":"x","text_b":"y","label":"entailment"}"#;
        let preds = r#"{"pair_id":"c","model_name":"m","probs":{"entailment":0.1,"neutral":0.2,"contradiction":0.7}}"#;
        let file = parse_label_file(&format!("{labels}\n{pairs}\n{preds}"), TaskKind::Nli).unwrap();
        assert_eq!(file.labels["a"], Label::Neutral);
        assert_eq!(file.labels["b"], Label::Entailment);
        assert_eq!(file.labels["c"], Label::Contradiction);
        assert_eq!(file.model_name.as_deref(), Some("m"));
    }
}

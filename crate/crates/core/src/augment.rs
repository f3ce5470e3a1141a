//! Template-based augmentation with concept annotations, seeded
//! subsampling, and assembly of the training-set variants.
//!
//! An annotated question pair yields one extra pair with the same label in
//! which every annotated phrase is rewritten through a template, by default
//! `"{canonical}, a {type}"`.
//!
//! Subsampling draws from a ChaCha8 stream seeded with the caller's seed
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`) through
//! `rand::seq::index::sample`, then restores input order. The same seed always
//! picks the same records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    char_slice, check_overlaps, check_span, ConceptAnnotation, CorpusError, Label, LabeledSentencePair, Provenance,
    Side,
};

pub const DEFAULT_TEMPLATE: &str = "{canonical}, a {type}";
/// Roughly the size of the RQE training split.
pub const DEFAULT_QQP_TARGET: usize = 9000;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid template '{template}': {reason}")]
    Template { template: String, reason: String },
    #[error(transparent)]
    Annotation(#[from] CorpusError),
    #[error("annotation for '{annotation_pair}' passed with pair '{pair}'")]
    ForeignAnnotation { pair: String, annotation_pair: String },
    #[error("cannot sample {target} records from a dataset of {size}")]
    TargetTooLarge { target: usize, size: usize },
    #[error("variant {variant} needs a non-empty '{source_name}' source: missing source")]
    MissingSource {
        variant: TrainingVariant,
        source_name: &'static str,
    },
    #[error("assembled dataset has duplicate id '{id}'")]
    DuplicateId { id: String },
    #[error("QQP line {line}: {message}")]
    Qqp { line: usize, message: String },
}

/// A replacement template with exactly one `{canonical}` and one `{type}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Template(String);

impl Template {
    pub fn new(template: &str) -> Result<Self, AugmentError> {
        for placeholder in ["{canonical}", "{type}"] {
            let count = template.matches(placeholder).count();
            if count != 1 {
                return Err(AugmentError::Template {
                    template: template.to_string(),
                    reason: format!("{placeholder} must appear exactly once, found {count}"),
                });
            }
        }
        Ok(Template(template.to_string()))
    }

    pub fn fill(&self, canonical: &str, concept_type: &str) -> String {
        // Fill in one pass so a canonical name containing "{type}" is left alone.
        let (before, after) = self.0.split_once("{canonical}").expect("validated template");
        let fill_type = |s: &str| s.replacen("{type}", concept_type, 1);
        if before.contains("{type}") {
            format!("{}{canonical}{after}", fill_type(before))
        } else {
            format!("{before}{canonical}{}", fill_type(after))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for Template {
    fn default() -> Self {
        Template(DEFAULT_TEMPLATE.to_string())
    }
}

impl TryFrom<String> for Template {
    type Error = AugmentError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Template::new(&value)
    }
}

impl From<Template> for String {
    fn from(t: Template) -> String {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub template: Template,
    pub seed: u64,
    pub qqp_target_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            template: Template::default(),
            seed: 0,
            qqp_target_size: DEFAULT_QQP_TARGET,
        }
    }
}

/// Rewrites every annotated span of `pair` through the template. Returns
/// `None` when there are no annotations.
pub fn augment_pair(
    pair: &LabeledSentencePair,
    annotations: &[&ConceptAnnotation],
    template: &Template,
) -> Result<Option<LabeledSentencePair>, AugmentError> {
    if annotations.is_empty() {
        return Ok(None);
    }
    for ann in annotations {
        if ann.pair_id != pair.id {
            return Err(AugmentError::ForeignAnnotation {
                pair: pair.id.clone(),
                annotation_pair: ann.pair_id.clone(),
            });
        }
        check_span(ann, pair.text(ann.side))?;
    }
    let owned: Vec<ConceptAnnotation> = annotations.iter().map(|a| (*a).clone()).collect();
    check_overlaps(&owned)?;

    let mut out = pair.clone();
    for side in [Side::A, Side::B] {
        let mut spans: Vec<&ConceptAnnotation> = owned.iter().filter(|a| a.side == side).collect();
        if spans.is_empty() {
            continue;
        }
        // right to left so earlier offsets stay valid
        spans.sort_by_key(|a| std::cmp::Reverse(a.span_start));
        let mut text = pair.text(side).to_string();
        for ann in spans {
            let len = text.chars().count();
            let head = char_slice(&text, 0, ann.span_start).unwrap_or_default();
            let tail = char_slice(&text, ann.span_end, len).unwrap_or_default();
            text = format!("{head}{}{tail}", template.fill(&ann.canonical_name, &ann.concept_type));
        }
        *out.text_mut(side) = text;
    }
    out.id = format!("{}#umls", pair.id);
    out.provenance = Provenance::UmlsAugmented;
    Ok(Some(out))
}

/// All input pairs, followed by one augmented pair for every pair that has
/// at least one annotation, both blocks in input order.
pub fn augment_dataset(
    pairs: &[LabeledSentencePair],
    annotations: &[ConceptAnnotation],
    template: &Template,
) -> Result<Vec<LabeledSentencePair>, AugmentError> {
    let mut by_pair: HashMap<&str, Vec<&ConceptAnnotation>> = HashMap::new();
    for ann in annotations {
        by_pair.entry(ann.pair_id.as_str()).or_default().push(ann);
    }
    let known: HashSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    if let Some(orphan) = annotations.iter().find(|a| !known.contains(a.pair_id.as_str())) {
        return Err(CorpusError::UnknownPair {
            pair_id: orphan.pair_id.clone(),
        }
        .into());
    }

    let mut out = pairs.to_vec();
    for pair in pairs {
        let anns = by_pair.get(pair.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        if let Some(augmented) = augment_pair(pair, anns, template)? {
            out.push(augmented);
        }
    }
    Ok(out)
}

/// Uniform sample of exactly `target` records without replacement, in input
/// order. Deterministic for a given seed.
pub fn subsample<T: Clone>(records: &[T], target: usize, seed: u64) -> Result<Vec<T>, AugmentError> {
    if target > records.len() {
        return Err(AugmentError::TargetTooLarge {
            target,
            size: records.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, records.len(), target).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

/// Reads the Quora question-pairs TSV
/// (`id, qid1, qid2, question1, question2, is_duplicate`, with header).
/// Duplicates become `true`, everything else `false`. Rows with a blank
/// question are skipped; the skip count is returned alongside.
pub fn load_qqp(path: &Path) -> Result<(Vec<LabeledSentencePair>, usize), AugmentError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_qqp(&content)
}

pub fn parse_qqp(content: &str) -> Result<(Vec<LabeledSentencePair>, usize), AugmentError> {
    let mut pairs = Vec::new();
    let mut skipped = 0;
    let mut seen = HashSet::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() || (idx == 0 && raw.starts_with("id\t")) {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 6 {
            return Err(AugmentError::Qqp {
                line,
                message: format!("expected 6 tab-separated columns, found {}", cols.len()),
            });
        }
        let label = match cols[5].trim() {
            "1" => Label::True,
            "0" => Label::False,
            other => {
                return Err(AugmentError::Qqp {
                    line,
                    message: format!("is_duplicate must be 0 or 1, found '{other}'"),
                })
            }
        };
        if cols[3].trim().is_empty() || cols[4].trim().is_empty() {
            skipped += 1;
            continue;
        }
        let id = format!("qqp-{}", cols[0]);
        if !seen.insert(id.clone()) {
            return Err(AugmentError::Qqp {
                line,
                message: format!("duplicate id '{}'", cols[0]),
            });
        }
        pairs.push(LabeledSentencePair {
            id,
            group_id: None,
            text_a: cols[3].to_string(),
            text_b: cols[4].to_string(),
            label: Some(label),
            provenance: Provenance::Qqp,
        });
    }
    Ok((pairs, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingVariant {
    /// The provided training split only.
    Orig,
    /// The validation split plus its augmented copies; no training data.
    DataAug,
    OrigPlusDataaugPlusQqp,
    DataaugPlusQqp,
    /// The data-aug set plus externally generated paraphrases of it.
    Paraphrase,
}

impl TrainingVariant {
    pub const ALL: [TrainingVariant; 5] = [
        TrainingVariant::Orig,
        TrainingVariant::DataAug,
        TrainingVariant::OrigPlusDataaugPlusQqp,
        TrainingVariant::DataaugPlusQqp,
        TrainingVariant::Paraphrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingVariant::Orig => "orig",
            TrainingVariant::DataAug => "data_aug",
            TrainingVariant::OrigPlusDataaugPlusQqp => "orig_plus_dataaug_plus_qqp",
            TrainingVariant::DataaugPlusQqp => "dataaug_plus_qqp",
            TrainingVariant::Paraphrase => "paraphrase",
        }
    }
}

impl fmt::Display for TrainingVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        TrainingVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = TrainingVariant::ALL.iter().map(|v| v.as_str()).collect();
                format!("unknown variant '{s}' (expected one of {})", names.join(", "))
            })
    }
}

/// Named inputs for [`assemble_training_set`]. Only the sources a variant
/// uses need to be present.
#[derive(Debug, Clone, Default)]
pub struct TrainingSources {
    pub train: Option<Vec<LabeledSentencePair>>,
    pub validation: Option<Vec<LabeledSentencePair>>,
    pub annotations: Option<Vec<ConceptAnnotation>>,
    pub qqp: Option<Vec<LabeledSentencePair>>,
    pub paraphrase: Option<Vec<LabeledSentencePair>>,
}

fn require<'a>(
    variant: TrainingVariant,
    name: &'static str,
    source: &'a Option<Vec<LabeledSentencePair>>,
) -> Result<&'a [LabeledSentencePair], AugmentError> {
    match source {
        Some(pairs) if !pairs.is_empty() => Ok(pairs),
        _ => Err(AugmentError::MissingSource {
            variant,
            source_name: name,
        }),
    }
}

fn with_provenance(pairs: &[LabeledSentencePair], provenance: Provenance) -> Vec<LabeledSentencePair> {
    pairs
        .iter()
        .cloned()
        .map(|p| LabeledSentencePair { provenance, ..p })
        .collect()
}

pub fn assemble_training_set(
    variant: TrainingVariant,
    sources: &TrainingSources,
    config: &AugmentConfig,
) -> Result<Vec<LabeledSentencePair>, AugmentError> {
    let data_aug = || -> Result<Vec<LabeledSentencePair>, AugmentError> {
        let validation = require(variant, "validation", &sources.validation)?;
        let annotations = sources.annotations.as_deref().ok_or(AugmentError::MissingSource {
            variant,
            source_name: "annotations",
        })?;
        augment_dataset(
            &with_provenance(validation, Provenance::Original),
            annotations,
            &config.template,
        )
    };
    let qqp = || -> Result<Vec<LabeledSentencePair>, AugmentError> {
        let qqp = require(variant, "qqp", &sources.qqp)?;
        subsample(
            &with_provenance(qqp, Provenance::Qqp),
            config.qqp_target_size,
            config.seed,
        )
    };

    let mut out = Vec::new();
    match variant {
        TrainingVariant::Orig => {
            out.extend(with_provenance(
                require(variant, "train", &sources.train)?,
                Provenance::Original,
            ));
        }
        TrainingVariant::DataAug => out.extend(data_aug()?),
        TrainingVariant::OrigPlusDataaugPlusQqp => {
            out.extend(with_provenance(
                require(variant, "train", &sources.train)?,
                Provenance::Original,
            ));
            out.extend(data_aug()?);
            out.extend(qqp()?);
        }
        TrainingVariant::DataaugPlusQqp => {
            out.extend(data_aug()?);
            out.extend(qqp()?);
        }
        TrainingVariant::Paraphrase => {
            let paraphrases = require(variant, "paraphrase", &sources.paraphrase)?;
            out.extend(data_aug()?);
            out.extend(with_provenance(paraphrases, Provenance::Paraphrase));
        }
    }

    let mut seen = HashSet::new();
    if let Some(dup) = out.iter().find(|p| !seen.insert(p.id.as_str())) {
        return Err(AugmentError::DuplicateId { id: dup.id.clone() });
    }
    Ok(out)
}

/// Per-label counts, handy for checking that augmentation preserved labels.
pub fn label_counts(pairs: &[LabeledSentencePair]) -> BTreeMap<Option<Label>, usize> {
    let mut counts = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.label).or_insert(0) += 1;
    }
    counts
}

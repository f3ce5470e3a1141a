//! Hard-label majority voting across models.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnsembleError {
    #[error("no models to combine")]
    NoModels,
    #[error("tie-break model '{0}' is not among the voting models")]
    UnknownTieBreakModel(String),
    #[error("model '{model}' does not cover the same pairs as '{reference}' (first difference: '{pair_id}')")]
    CoverageMismatch {
        model: String,
        reference: String,
        pair_id: String,
    },
    #[error("model '{0}' appears more than once")]
    DuplicateModel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteResult {
    pub pair_id: String,
    pub label: Label,
    pub votes: BTreeMap<Label, usize>,
    pub tie_broken: bool,
}

/// One model's hard labels keyed by pair id.
pub type ModelLabels = (String, BTreeMap<String, Label>);

/// Majority vote per pair. Ties among the top labels go to the tie-break
/// model's label when it is among them, else to the alphabetically smallest
/// label name. Results are ordered by pair id.
pub fn majority_vote(predictions: &[ModelLabels], tie_break_model: &str) -> Result<Vec<VoteResult>, EnsembleError> {
    let (reference_name, reference) = predictions.first().ok_or(EnsembleError::NoModels)?;
    let mut names = BTreeSet::new();
    for (name, _) in predictions {
        if !names.insert(name.as_str()) {
            return Err(EnsembleError::DuplicateModel(name.clone()));
        }
    }
    let tie_breaker = predictions
        .iter()
        .find(|(name, _)| name == tie_break_model)
        .map(|(_, labels)| labels)
        .ok_or_else(|| EnsembleError::UnknownTieBreakModel(tie_break_model.to_string()))?;

    for (name, labels) in &predictions[1..] {
        let diff = labels
            .keys()
            .find(|k| !reference.contains_key(*k))
            .or_else(|| reference.keys().find(|k| !labels.contains_key(*k)));
        if let Some(pair_id) = diff {
            return Err(EnsembleError::CoverageMismatch {
                model: name.clone(),
                reference: reference_name.clone(),
                pair_id: pair_id.clone(),
            });
        }
    }

    let results = reference
        .keys()
        .map(|pair_id| {
            let mut votes: BTreeMap<Label, usize> = BTreeMap::new();
            for (_, labels) in predictions {
                *votes.entry(labels[pair_id]).or_insert(0) += 1;
            }
            let top = votes.values().copied().max().unwrap_or(0);
            let tied: Vec<Label> = votes.iter().filter(|(_, &n)| n == top).map(|(l, _)| *l).collect();
            let (label, tie_broken) = if tied.len() == 1 {
                (tied[0], false)
            } else {
                let preferred = tie_breaker[pair_id];
                let label = if tied.contains(&preferred) {
                    preferred
                } else {
                    *tied.iter().min_by_key(|l| l.as_str()).expect("non-empty")
                };
                (label, true)
            };
            VoteResult {
                pair_id: pair_id.clone(),
                label,
                votes,
                tie_broken,
            }
        })
        .collect();
    Ok(results)
}

//! Accuracy, confusion matrices, F1 and dataset composition.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, LabeledSentencePair, Provenance, TaskKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("pair '{0}' has a gold label but no prediction")]
    MissingPrediction(String),
    #[error("pair '{0}' has a prediction but no gold label")]
    MissingGold(String),
    #[error("label '{0}' is not in the label set")]
    UnknownLabel(Label),
    #[error("duplicate label '{0}' in the label set")]
    DuplicateLabel(Label),
    #[error("cannot compute metrics on an empty confusion matrix")]
    Empty,
}

/// Rows are gold labels, columns predictions, both in `labels` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<Label>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: &[Label]) -> Result<Self, EvalError> {
        let mut seen = BTreeSet::new();
        for l in labels {
            if !seen.insert(*l) {
                return Err(EvalError::DuplicateLabel(*l));
            }
        }
        Ok(ConfusionMatrix {
            labels: labels.to_vec(),
            counts: vec![vec![0; labels.len()]; labels.len()],
        })
    }

    pub fn index(&self, label: Label) -> Result<usize, EvalError> {
        self.labels
            .iter()
            .position(|l| *l == label)
            .ok_or(EvalError::UnknownLabel(label))
    }

    pub fn add(&mut self, gold: Label, pred: Label) -> Result<(), EvalError> {
        let (i, j) = (self.index(gold)?, self.index(pred)?);
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn get(&self, gold: Label, pred: Label) -> Result<u64, EvalError> {
        Ok(self.counts[self.index(gold)?][self.index(pred)?])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }
}

/// Builds the confusion matrix over `labels`. Gold and predicted key sets
/// must match exactly.
pub fn confusion(
    gold: &BTreeMap<String, Label>,
    pred: &BTreeMap<String, Label>,
    labels: &[Label],
) -> Result<ConfusionMatrix, EvalError> {
    if let Some(id) = gold.keys().find(|k| !pred.contains_key(*k)) {
        return Err(EvalError::MissingPrediction(id.clone()));
    }
    if let Some(id) = pred.keys().find(|k| !gold.contains_key(*k)) {
        return Err(EvalError::MissingGold(id.clone()));
    }
    let mut cm = ConfusionMatrix::zeros(labels)?;
    for (id, g) in gold {
        cm.add(*g, pred[id])?;
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    match cm.total() {
        0 => Err(EvalError::Empty),
        total => Ok(cm.trace() as f64 / total as f64),
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

pub fn class_metrics(cm: &ConfusionMatrix, positive: Label) -> Result<ClassMetrics, EvalError> {
    let k = cm.index(positive)?;
    let tp = cm.counts[k][k];
    let precision = ratio(tp, cm.col_sum(k));
    let recall = ratio(tp, cm.row_sum(k));
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassMetrics {
        precision,
        recall,
        f1,
        support: cm.row_sum(k),
    })
}

pub fn f1(cm: &ConfusionMatrix, positive: Label) -> Result<f64, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    Ok(class_metrics(cm, positive)?.f1)
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.total() == 0 || cm.labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = cm
        .labels
        .iter()
        .map(|l| class_metrics(cm, *l).map(|m| m.f1))
        .sum::<Result<f64, _>>()?;
    Ok(sum / cm.labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub total: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// F1 of the `True` class; only set for RQE.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_f1: Option<f64>,
    pub per_class: BTreeMap<Label, ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task: {}", self.task.as_str());
        let _ = writeln!(out, "pairs: {}", self.total);
        let _ = writeln!(out, "accuracy: {:.6}", self.accuracy);
        let _ = writeln!(out, "macro_f1: {:.6}", self.macro_f1);
        if let Some(f) = self.positive_f1 {
            let _ = writeln!(out, "positive_f1: {f:.6}");
        }
        let _ = writeln!(out, "\nper class:");
        for label in &self.confusion.labels {
            let m = &self.per_class[label];
            let _ = writeln!(
                out,
                "  {:<14} precision {:.4}  recall {:.4}  f1 {:.4}  support {}",
                label.as_str(),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        let _ = writeln!(out, "\nconfusion (rows gold, columns predicted):");
        let _ = write!(out, "  {:<14}", "");
        for l in &self.confusion.labels {
            let _ = write!(out, "{:>14}", l.as_str());
        }
        out.push('\n');
        for (l, row) in self.confusion.labels.iter().zip(&self.confusion.counts) {
            let _ = write!(out, "  {:<14}", l.as_str());
            for c in row {
                let _ = write!(out, "{c:>14}");
            }
            out.push('\n');
        }
        out
    }
}

/// Full report with the task's label order.
pub fn evaluate(
    gold: &BTreeMap<String, Label>,
    pred: &BTreeMap<String, Label>,
    task: TaskKind,
) -> Result<EvalReport, EvalError> {
    let cm = confusion(gold, pred, task.labels())?;
    let per_class = cm
        .labels
        .iter()
        .map(|l| Ok((*l, class_metrics(&cm, *l)?)))
        .collect::<Result<BTreeMap<_, _>, EvalError>>()?;
    Ok(EvalReport {
        task,
        total: cm.total(),
        accuracy: accuracy(&cm)?,
        macro_f1: macro_f1(&cm)?,
        positive_f1: match task {
            TaskKind::Rqe => Some(f1(&cm, Label::True)?),
            TaskKind::Nli => None,
        },
        per_class,
        confusion: cm,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub total: usize,
    pub unlabeled: usize,
    pub by_label: BTreeMap<Label, usize>,
    pub by_provenance: BTreeMap<Provenance, usize>,
    pub groups: usize,
}

pub fn composition(pairs: &[LabeledSentencePair]) -> Composition {
    let mut c = Composition {
        total: pairs.len(),
        ..Composition::default()
    };
    let mut groups = BTreeSet::new();
    for p in pairs {
        match p.label {
            Some(l) => *c.by_label.entry(l).or_insert(0) += 1,
            None => c.unlabeled += 1,
        }
        *c.by_provenance.entry(p.provenance).or_insert(0) += 1;
        if let Some(g) = &p.group_id {
            groups.insert(g.as_str());
        }
    }
    c.groups = groups.len();
    c
}

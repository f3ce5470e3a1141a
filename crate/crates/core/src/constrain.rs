//! Dataset-prior post-processing for NLI.
//!
//! Every premise comes with exactly three hypotheses, one per class. Given a
//! model's probabilities for the three, the member with the highest
//! P(entailment) becomes the entailment, the higher P(contradiction) of the
//! remaining two becomes the contradiction, and the last one is neutral.
//! Ties go to the lexicographically smallest pair id.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Distribution, Label, LabelRecord, LabeledSentencePair, PredictionRecord, SimplexError, TaskKind};

#[derive(Debug, Error)]
pub enum ConstrainError {
    #[error("pair '{pair_id}' has no group_id")]
    MissingGroupId { pair_id: String },
    #[error("group '{group_id}' has {size} members: group size != 3")]
    GroupSize { group_id: String, size: usize },
    #[error("no prediction for pair '{pair_id}'")]
    MissingPrediction { pair_id: String },
    #[error("prediction for unknown pair '{pair_id}'")]
    UnknownPair { pair_id: String },
    #[error("more than one prediction for pair '{pair_id}'; filter to a single model first")]
    DuplicatePrediction { pair_id: String },
    #[error("prediction for '{pair_id}': {source}")]
    Simplex {
        pair_id: String,
        #[source]
        source: SimplexError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMember {
    pub pair_id: String,
    pub probs: Distribution,
}

/// Three hypotheses sharing one premise.
#[derive(Debug, Clone, PartialEq)]
pub struct PremiseGroup {
    group_id: String,
    members: [GroupMember; 3],
}

impl PremiseGroup {
    pub fn new(group_id: impl Into<String>, members: Vec<GroupMember>) -> Result<Self, ConstrainError> {
        let group_id = group_id.into();
        let size = members.len();
        let mut members: [GroupMember; 3] = members.try_into().map_err(|_| ConstrainError::GroupSize {
            group_id: group_id.clone(),
            size,
        })?;
        for m in &mut members {
            m.probs = m
                .probs
                .clone()
                .validated(TaskKind::Nli)
                .map_err(|source| ConstrainError::Simplex {
                    pair_id: m.pair_id.clone(),
                    source,
                })?;
        }
        Ok(PremiseGroup { group_id, members })
    }

    pub fn group_id(&self) -> &str {
        &self.group_id
    }

    pub fn members(&self) -> &[GroupMember; 3] {
        &self.members
    }
}

/// A group that could not be constrained, kept for the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedGroup {
    pub group_id: String,
    pub pair_ids: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Grouping {
    pub groups: Vec<PremiseGroup>,
    /// Groups whose size is not 3, with their members' predictions.
    pub malformed: Vec<(MalformedGroup, Vec<GroupMember>)>,
}

/// Groups predictions by premise, setting aside groups of the wrong size
/// instead of failing. Groups appear in order of first appearance in `pairs`.
pub fn collect_groups(preds: &[PredictionRecord], pairs: &[LabeledSentencePair]) -> Result<Grouping, ConstrainError> {
    let known: HashSet<&str> = pairs.iter().map(|p| p.id.as_str()).collect();
    let mut by_pair: HashMap<&str, &PredictionRecord> = HashMap::new();
    for pred in preds {
        if !known.contains(pred.pair_id.as_str()) {
            return Err(ConstrainError::UnknownPair {
                pair_id: pred.pair_id.clone(),
            });
        }
        if by_pair.insert(&pred.pair_id, pred).is_some() {
            return Err(ConstrainError::DuplicatePrediction {
                pair_id: pred.pair_id.clone(),
            });
        }
    }

    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<GroupMember>> = HashMap::new();
    for pair in pairs {
        let group_id = pair.group_id.as_deref().ok_or_else(|| ConstrainError::MissingGroupId {
            pair_id: pair.id.clone(),
        })?;
        let pred = by_pair
            .get(pair.id.as_str())
            .ok_or_else(|| ConstrainError::MissingPrediction {
                pair_id: pair.id.clone(),
            })?;
        let entry = members.entry(group_id).or_insert_with(|| {
            order.push(group_id);
            Vec::new()
        });
        entry.push(GroupMember {
            pair_id: pair.id.clone(),
            probs: pred.probs.clone(),
        });
    }

    let mut grouping = Grouping::default();
    for group_id in order {
        let group_members = members.remove(group_id).unwrap_or_default();
        if group_members.len() == 3 {
            grouping.groups.push(PremiseGroup::new(group_id, group_members)?);
        } else {
            let report = MalformedGroup {
                group_id: group_id.to_string(),
                pair_ids: group_members.iter().map(|m| m.pair_id.clone()).collect(),
            };
            grouping.malformed.push((report, group_members));
        }
    }
    Ok(grouping)
}

/// Strict grouping: any group whose size is not 3 is an error.
pub fn group_by_premise(
    preds: &[PredictionRecord],
    pairs: &[LabeledSentencePair],
) -> Result<Vec<PremiseGroup>, ConstrainError> {
    let grouping = collect_groups(preds, pairs)?;
    if let Some((bad, _)) = grouping.malformed.first() {
        return Err(ConstrainError::GroupSize {
            group_id: bad.group_id.clone(),
            size: bad.pair_ids.len(),
        });
    }
    Ok(grouping.groups)
}

/// Index of the member with the largest probability for `label`, preferring
/// the smallest pair id on ties.
fn pick(candidates: &[&GroupMember], label: Label) -> usize {
    let mut best = 0;
    for (i, m) in candidates.iter().enumerate().skip(1) {
        let (p, q) = (m.probs.get(label), candidates[best].probs.get(label));
        if p > q || (p == q && m.pair_id < candidates[best].pair_id) {
            best = i;
        }
    }
    best
}

/// Assigns entailment, then contradiction, then neutral.
pub fn apply_prior(group: &PremiseGroup) -> BTreeMap<String, Label> {
    let mut remaining: Vec<&GroupMember> = group.members.iter().collect();
    let mut out = BTreeMap::new();
    for label in [Label::Entailment, Label::Contradiction] {
        let winner = remaining.remove(pick(&remaining, label));
        out.insert(winner.pair_id.clone(), label);
    }
    out.insert(remaining[0].pair_id.clone(), Label::Neutral);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstrainReport {
    pub groups_constrained: usize,
    /// Pairs whose label differs from the model's own argmax.
    pub labels_changed: usize,
    /// Groups left at per-pair argmax because they did not have 3 members.
    pub malformed_groups: Vec<MalformedGroup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainOutcome {
    /// One label per pair, in dataset order.
    pub labels: Vec<LabelRecord>,
    pub report: ConstrainReport,
}

/// Applies the prior to every well-formed group; malformed groups fall back
/// to per-pair argmax and are listed in the report.
pub fn constrain(
    preds: &[PredictionRecord],
    pairs: &[LabeledSentencePair],
) -> Result<ConstrainOutcome, ConstrainError> {
    let grouping = collect_groups(preds, pairs)?;
    let mut assigned: HashMap<String, Label> = HashMap::new();
    let mut report = ConstrainReport::default();

    for group in &grouping.groups {
        for (pair_id, label) in apply_prior(group) {
            let member = group.members.iter().find(|m| m.pair_id == pair_id).expect("member");
            if member.probs.argmax(TaskKind::Nli) != label {
                report.labels_changed += 1;
            }
            assigned.insert(pair_id, label);
        }
        report.groups_constrained += 1;
    }
    for (bad, members) in grouping.malformed {
        for m in members {
            assigned.insert(m.pair_id, m.probs.argmax(TaskKind::Nli));
        }
        report.malformed_groups.push(bad);
    }

    let labels = pairs
        .iter()
        .map(|p| LabelRecord {
            pair_id: p.id.clone(),
            label: assigned[&p.id],
        })
        .collect();
    Ok(ConstrainOutcome { labels, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use proptest::prelude::*;

    fn dist(e: f64, n: f64, c: f64) -> Distribution {
        [(Label::Entailment, e), (Label::Neutral, n), (Label::Contradiction, c)]
            .into_iter()
            .collect()
    }

    fn group(rows: [(&str, Distribution); 3]) -> PremiseGroup {
        PremiseGroup::new(
            "g",
            rows.into_iter()
                .map(|(id, probs)| GroupMember {
                    pair_id: id.into(),
                    probs,
                })
                .collect(),
        )
        .unwrap()
    }

    fn expect(pairs: &[(&str, Label)]) -> BTreeMap<String, Label> {
        pairs.iter().map(|(id, l)| (id.to_string(), *l)).collect()
    }

    #[test]
    fn vertices() {
        let g = group([
            ("h1", dist(1.0, 0.0, 0.0)),
            ("h2", dist(0.0, 0.0, 1.0)),
            ("h3", dist(0.0, 1.0, 0.0)),
        ]);
        assert_eq!(
            apply_prior(&g),
            expect(&[
                ("h1", Label::Entailment),
                ("h2", Label::Contradiction),
                ("h3", Label::Neutral)
            ])
        );
    }

    #[test]
    fn greedy_reassigns_argmax() {
        // h1 argmax is entailment but h2 has the larger P(entailment)
        let g = group([
            ("h1", dist(0.40, 0.35, 0.25)),
            ("h2", dist(0.45, 0.30, 0.25)),
            ("h3", dist(0.10, 0.20, 0.70)),
        ]);
        assert_eq!(
            apply_prior(&g),
            expect(&[
                ("h2", Label::Entailment),
                ("h3", Label::Contradiction),
                ("h1", Label::Neutral)
            ])
        );
    }

    #[test]
    fn identical_rows_follow_pair_id_order() {
        let d = dist(0.5, 0.25, 0.25);
        let g = group([("c", d.clone()), ("a", d.clone()), ("b", d)]);
        assert_eq!(
            apply_prior(&g),
            expect(&[
                ("a", Label::Entailment),
                ("b", Label::Contradiction),
                ("c", Label::Neutral)
            ])
        );
    }

    fn nli_pair(id: &str, group: Option<&str>) -> LabeledSentencePair {
        LabeledSentencePair {
            id: id.into(),
            group_id: group.map(Into::into),
            text_a: "premise".into(),
            text_b: "hypothesis".into(),
            label: None,
            provenance: Provenance::Original,
        }
    }

    fn pred(id: &str, d: Distribution) -> PredictionRecord {
        PredictionRecord {
            pair_id: id.into(),
            model_name: "m".into(),
            probs: d,
        }
    }

    #[test]
    fn grouping_sizes() {
        assert!(group_by_premise(&[], &[]).unwrap().is_empty());

        let pairs = vec![nli_pair("a", Some("p")), nli_pair("b", Some("p"))];
        let preds = vec![pred("a", dist(1.0, 0.0, 0.0)), pred("b", dist(0.0, 1.0, 0.0))];
        let err = group_by_premise(&preds, &pairs).unwrap_err();
        assert!(err.to_string().contains("group size != 3"), "{err}");
    }

    #[test]
    fn grouping_errors() {
        let pairs = vec![nli_pair("a", None)];
        let preds = vec![pred("a", dist(1.0, 0.0, 0.0))];
        assert!(matches!(
            group_by_premise(&preds, &pairs),
            Err(ConstrainError::MissingGroupId { .. })
        ));

        let pairs = vec![nli_pair("a", Some("p"))];
        assert!(matches!(
            group_by_premise(&[], &pairs),
            Err(ConstrainError::MissingPrediction { .. })
        ));
        assert!(matches!(
            group_by_premise(&[pred("zz", dist(1.0, 0.0, 0.0))], &pairs),
            Err(ConstrainError::UnknownPair { .. })
        ));
    }

    #[test]
    fn malformed_groups_fall_back_to_argmax() {
        let pairs = vec![
            nli_pair("a1", Some("p1")),
            nli_pair("a2", Some("p1")),
            nli_pair("a3", Some("p1")),
            nli_pair("b1", Some("p2")),
        ];
        let preds = vec![
            pred("a1", dist(0.6, 0.3, 0.1)),
            pred("a2", dist(0.7, 0.2, 0.1)),
            pred("a3", dist(0.1, 0.1, 0.8)),
            pred("b1", dist(0.2, 0.5, 0.3)),
        ];
        let out = constrain(&preds, &pairs).unwrap();
        let labels: Vec<_> = out.labels.iter().map(|r| (r.pair_id.as_str(), r.label)).collect();
        assert_eq!(
            labels,
            [
                ("a1", Label::Neutral),
                ("a2", Label::Entailment),
                ("a3", Label::Contradiction),
                ("b1", Label::Neutral)
            ]
        );
        assert_eq!(out.report.groups_constrained, 1);
        assert_eq!(out.report.labels_changed, 1);
        assert_eq!(out.report.malformed_groups[0].group_id, "p2");
    }

    fn simplex() -> impl Strategy<Value = Distribution> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_filter_map("non-zero", |(e, n, c)| {
            (e + n + c > 1e-9).then(|| {
                Distribution::from_weights([(Label::Entailment, e), (Label::Neutral, n), (Label::Contradiction, c)])
            })
        })
    }

    proptest! {
        #[test]
        fn always_a_permutation(rows in [simplex(), simplex(), simplex()]) {
            let [d0, d1, d2] = rows;
            let g = group([("x", d0), ("y", d1), ("z", d2)]);
            let out = apply_prior(&g);
            let mut labels: Vec<Label> = out.values().copied().collect();
            labels.sort();
            prop_assert_eq!(labels, vec![Label::Entailment, Label::Neutral, Label::Contradiction]);
            let winner = out.iter().find(|(_, l)| **l == Label::Entailment).unwrap().0;
            let best = g.members().iter().find(|m| &m.pair_id == winner).unwrap().probs.get(Label::Entailment);
            for m in g.members() {
                prop_assert!(best >= m.probs.get(Label::Entailment));
            }
        }

        #[test]
        fn member_order_does_not_matter(rows in [simplex(), simplex(), simplex()], perm in 0usize..6) {
            let ids = ["x", "y", "z"];
            let members: Vec<(&str, Distribution)> = ids.iter().copied().zip(rows).collect();
            let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let permuted: [(&str, Distribution); 3] = orders[perm].map(|i| members[i].clone());
            let original: [(&str, Distribution); 3] = [members[0].clone(), members[1].clone(), members[2].clone()];
            prop_assert_eq!(apply_prior(&group(original)), apply_prior(&group(permuted)));
        }

        #[test]
        fn scaling_before_renormalization(rows in [simplex(), simplex(), simplex()], k in -4i32..5) {
            let factor = 2f64.powi(k);
            let scaled = rows.clone().map(|d| Distribution::from_weights(d.iter().map(|(l, p)| (l, p * factor))));
            let [a, b, c] = rows;
            let [sa, sb, sc] = scaled;
            prop_assert_eq!(
                apply_prior(&group([("x", a), ("y", b), ("z", c)])),
                apply_prior(&group([("x", sa), ("y", sb), ("z", sc)]))
            );
        }
    }
}

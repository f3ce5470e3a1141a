use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use medtext_core::augment::parse_qqp;
use medtext_core::corpus::{
    dataset_stats, parse_annotations, parse_answers, parse_gazetteer, parse_label_file, parse_pairs, parse_predictions,
    parse_questions, validate_annotations, Label, PairFormat, TaskKind,
};

fn malformed_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/malformed")
}

struct Case {
    file: String,
    kind: String,
    task: Option<TaskKind>,
    companion: Option<String>,
    expect: String,
}

fn manifest() -> Vec<Case> {
    let text = fs::read_to_string(malformed_dir().join("MANIFEST.tsv")).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 5, "bad manifest line {line:?}");
            Case {
                file: cols[0].into(),
                kind: cols[1].into(),
                task: (cols[2] != "-").then(|| cols[2].parse().unwrap()),
                companion: (cols[3] != "-").then(|| cols[3].to_string()),
                expect: cols[4].into(),
            }
        })
        .collect()
}

/// Loads a fixture the way its kind demands; returns the error text, if any.
fn load(case: &Case) -> Result<(), String> {
    let path = malformed_dir().join(&case.file);
    let content = fs::read_to_string(&path).unwrap();
    let task = case.task.unwrap_or(TaskKind::Nli);
    let err = |e: &dyn std::fmt::Display| e.to_string();
    match case.kind.as_str() {
        "pairs" => parse_pairs(&content, task, PairFormat::from_path(&path))
            .map(drop)
            .map_err(|e| err(&e)),
        "predictions" => parse_predictions(&content, task).map(drop).map_err(|e| err(&e)),
        "labels" => parse_label_file(&content, task).map(drop).map_err(|e| err(&e)),
        "gazetteer" => parse_gazetteer(&content).map(drop).map_err(|e| err(&e)),
        "answers" => parse_answers(&content).map(drop).map_err(|e| err(&e)),
        "questions" => parse_questions(&content).map(drop).map_err(|e| err(&e)),
        "qqp" => parse_qqp(&content).map(drop).map_err(|e| err(&e)),
        "annotations" => {
            let anns = parse_annotations(&content).map_err(|e| err(&e))?;
            if let Some(companion) = &case.companion {
                let pairs_text = fs::read_to_string(malformed_dir().join(companion)).unwrap();
                let pairs = parse_pairs(&pairs_text, task, PairFormat::Jsonl).unwrap();
                validate_annotations(&anns, &pairs).map_err(|e| err(&e))?;
            }
            Ok(())
        }
        other => panic!("unknown fixture kind {other}"),
    }
}

#[test]
fn every_malformed_fixture_is_rejected_with_a_diagnostic() {
    let cases = manifest();
    assert!(cases.len() >= 20);
    let listed: BTreeSet<&str> = cases.iter().map(|c| c.file.as_str()).collect();
    let mut failures = String::new();
    for case in &cases {
        match load(case) {
            Ok(()) => writeln!(failures, "{}: accepted", case.file).unwrap(),
            Err(msg) if !msg.contains(&case.expect) => {
                writeln!(failures, "{}: error {msg:?} lacks {:?}", case.file, case.expect).unwrap()
            }
            Err(_) => {}
        }
    }
    assert!(failures.is_empty(), "{failures}");

    // every fixture file on disk is covered by the manifest
    for entry in fs::read_dir(malformed_dir()).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "MANIFEST.tsv" && !name.starts_with("ann_companion") {
            assert!(listed.contains(name.as_str()), "{name} missing from manifest");
        }
    }
}

fn nli_tsv(per_class: usize, with_header: bool) -> String {
    let mut out = String::new();
    if with_header {
        out.push_str("id\tgroup_id\ttext_a\ttext_b\tlabel\n");
    }
    for g in 0..per_class {
        for label in ["entailment", "contradiction", "neutral"] {
            writeln!(
                out,
                "p{g}-{label}\tg{g}\tPremise number {g} .\tHypothesis for {label} .\t{label}"
            )
            .unwrap();
        }
    }
    out
}

fn counts(labels: impl IntoIterator<Item = Label>) -> BTreeMap<Label, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

#[test]
fn nli_splits_have_the_published_class_counts() {
    for (per_class, header) in [(3744, true), (465, false), (474, true)] {
        let pairs = parse_pairs(&nli_tsv(per_class, header), TaskKind::Nli, PairFormat::Tsv).unwrap();
        assert_eq!(pairs.len(), 3 * per_class);
        let c = counts(pairs.iter().map(|p| p.label.unwrap()));
        for l in TaskKind::Nli.labels() {
            assert_eq!(c[l], per_class);
        }
    }
}

#[test]
fn validation_predictions_cover_465_groups() {
    let mut out = String::new();
    for g in 0..465 {
        for h in 0..3 {
            writeln!(
                out,
                r#"{{"pair_id":"g{g}-h{h}","model_name":"m","probs":{{"entailment":0.5,"neutral":0.3,"contradiction":0.2}}}}"#
            )
            .unwrap();
        }
    }
    let preds = parse_predictions(&out, TaskKind::Nli).unwrap();
    assert_eq!(preds.len(), 1395);
    let groups: BTreeSet<&str> = preds.iter().map(|p| p.pair_id.split('-').next().unwrap()).collect();
    assert_eq!(groups.len(), 465);
}

#[test]
fn rqe_splits_have_the_published_class_counts() {
    for (trues, falses) in [(4655, 3933), (129, 173)] {
        let mut out = String::new();
        for i in 0..trues + falses {
            let label = if i < trues { "true" } else { "false" };
            writeln!(
                out,
                r#"{{"id":"r{i}","text_a":"Consumer question {i}?","text_b":"FAQ {i}?","label":"{label}"}}"#
            )
            .unwrap();
        }
        let pairs = parse_pairs(&out, TaskKind::Rqe, PairFormat::Jsonl).unwrap();
        let c = counts(pairs.iter().map(|p| p.label.unwrap()));
        assert_eq!(c[&Label::True], trues);
        assert_eq!(c[&Label::False], falses);
    }
}

/// Answers whose token counts sum to `total_tokens`, spread as evenly as
/// possible.
fn answers_jsonl(questions: usize, per_question: usize, total_tokens: usize) -> String {
    let n = questions * per_question;
    let (base, extra) = (total_tokens / n, total_tokens % n);
    let mut out = String::new();
    for i in 0..n {
        let len = base + usize::from(i < extra);
        let text = vec!["word"; len].join(" ");
        writeln!(
            out,
            r#"{{"question_id":"q{}","answer_id":"a{i}","text":"{text}","source":"s"}}"#,
            i / per_question
        )
        .unwrap();
    }
    out
}

#[test]
fn ranking_splits_match_the_published_statistics() {
    // (questions, answers per question, published mean length, total tokens)
    let rows = [
        (104, 8, 434.8, 361_754),
        (104, 8, 432.5, 359_840),
        (25, 9, 420.4, 94_590),
        (150, 7, 418.0, 438_900),
    ];
    for (questions, per_question, mean_len, total) in rows {
        let answers = parse_answers(&answers_jsonl(questions, per_question, total)).unwrap();
        let stats = dataset_stats(&answers);
        assert_eq!(stats.question_count, questions);
        assert_eq!(stats.avg_answer_count, per_question as f64);
        assert_eq!((stats.avg_answer_length * 10.0).round() / 10.0, mean_len);
    }
}

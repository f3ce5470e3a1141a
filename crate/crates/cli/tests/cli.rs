use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn medtext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medtext"))
        .args(args)
        .output()
        .expect("spawn medtext")
}

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demo")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(medtext(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(medtext(&[]).status.code(), Some(2));
    assert_eq!(medtext(&["expand", "--out", "x.jsonl"]).status.code(), Some(2));
}

#[test]
fn help_works_for_every_subcommand() {
    for sub in [
        "expand",
        "augment",
        "assemble",
        "score",
        "constrain",
        "ensemble",
        "rank",
        "eval",
        "stats",
        "validate",
        "pipeline",
    ] {
        let out = medtext(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
        assert!(!out.stdout.is_empty());
    }
    assert_eq!(medtext(&["--version"]).status.code(), Some(0));
}

#[test]
fn expand_rewrites_the_cxr_premise() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("expanded.jsonl");
    let pairs = demo_dir().join("data/nli_pairs.jsonl");
    let gz = demo_dir().join("data/gazetteer.tsv");
    let res = medtext(&["expand", "--pairs", s(&pairs), "--gazetteer", s(&gz), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("Her Chest X-Ray was clear and it did not appear she had an infection."));
    assert!(text.contains("On arrival to the Medical Intensive Care Unit , patient is hemodynamically stable ."));
}

#[test]
fn data_errors_exit_with_1_and_leave_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\", \"text_a\": \"a\"}\n").unwrap();
    let out = dir.path().join("out.jsonl");
    let res = medtext(&["expand", "--pairs", s(&bad), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from("bad.jsonl")]);
}

#[test]
fn validate_reports_bad_files() {
    let malformed = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/malformed");
    let good = demo_dir().join("data/nli_pairs.jsonl");
    let res = medtext(&["validate", "--kind", "pairs", s(&good)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let bad = malformed.join("nli_not_json.jsonl");
    let res = medtext(&["validate", "--kind", "pairs", s(&good), s(&bad)]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn demo_pipeline_reproduces_the_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir(root.join("data")).unwrap();
    for entry in fs::read_dir(demo_dir().join("data")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), root.join("data").join(entry.file_name())).unwrap();
    }
    fs::copy(demo_dir().join("demo.toml"), root.join("demo.toml")).unwrap();

    let dry = medtext(&["pipeline", "--config", s(&root.join("demo.toml")), "--dry-run"]);
    assert_eq!(dry.status.code(), Some(0));
    assert!(!root.join("out").exists());

    let res = medtext(&["pipeline", "--config", s(&root.join("demo.toml"))]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let golden = demo_dir().join("golden");
    let mut names: Vec<_> = fs::read_dir(root.join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    let mut want: Vec<_> = fs::read_dir(&golden).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    want.sort();
    assert_eq!(names, want, "output file set (temp files would show up here)");
    for name in names {
        assert_eq!(
            fs::read(root.join("out").join(&name)).unwrap(),
            fs::read(golden.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

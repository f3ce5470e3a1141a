//! One function per subcommand. Each takes the same argument struct that
//! clap fills in, so pipeline stages can call them directly.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use log::info;
use serde::Serialize;

use medtext_core::augment::{
    assemble_training_set, augment_dataset, label_counts, load_qqp, AugmentConfig, Template, TrainingSources,
    TrainingVariant, DEFAULT_QQP_TARGET, DEFAULT_TEMPLATE,
};
use medtext_core::constrain::constrain;
use medtext_core::corpus::{
    dataset_stats, load_annotations, load_answers, load_gazetteer, load_label_file, load_pairs, load_predictions,
    load_questions, validate_annotations, write_labels, write_pairs, write_predictions, Gazetteer, LabeledSentencePair,
    PairFormat, PredictionRecord, TaskKind,
};
use medtext_core::ensemble::majority_vote;
use medtext_core::eval::{composition, evaluate};
use medtext_core::preprocess::{expand, ExpandConfig};
use medtext_core::rank::{
    classification_accuracy, featurize, rank_all, sentence_pairs, train_ranker, Bm25Params, RankerModel, TrainConfig,
};
use medtext_core::scorer::{load_stopwords, ExternalScorer, OverlapScorer, OverlapScorerConfig, ScoreQuery, Scorer};

use crate::output::{write_atomic, write_json, write_jsonl, write_text};

fn read_pairs(path: &Path, task: TaskKind) -> Result<Vec<LabeledSentencePair>> {
    load_pairs(path, task, PairFormat::from_path(path))
        .with_context(|| format!("loading pairs from {}", path.display()))
}

fn save_pairs(path: &Path, pairs: &[LabeledSentencePair]) -> Result<()> {
    write_atomic(path, |w| write_pairs(w, pairs))
}

#[derive(Debug, Clone, Args)]
pub struct ExpandArgs {
    /// Sentence pairs (JSONL, or TSV by extension).
    #[arg(long)]
    pub pairs: PathBuf,
    /// Two-column abbreviation gazetteer.
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    #[arg(long, default_value = "nli")]
    pub task: TaskKind,
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    #[arg(long, default_value_t = 6)]
    pub max_len: usize,
    /// Skip the local-context strategy.
    #[arg(long)]
    pub no_local: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// JSONL trace of every replacement.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

pub fn run_expand(args: &ExpandArgs) -> Result<()> {
    let config = ExpandConfig {
        min_len: args.min_len,
        max_len: args.max_len,
        local_context: !args.no_local,
        gazetteer: args.gazetteer.is_some(),
    };
    config.validate().map_err(anyhow::Error::msg)?;
    let pairs = read_pairs(&args.pairs, args.task)?;
    let gazetteer = match &args.gazetteer {
        Some(path) => load_gazetteer(path).with_context(|| format!("loading gazetteer {}", path.display()))?,
        None => Gazetteer::new(),
    };
    let mut expanded = Vec::with_capacity(pairs.len());
    let mut traces = Vec::new();
    for pair in &pairs {
        let (out, trace) = expand(pair, &gazetteer, &config);
        expanded.push(out);
        traces.extend(trace);
    }
    info!("expanded {} pairs, {} replacements", pairs.len(), traces.len());
    save_pairs(&args.out, &expanded)?;
    if let Some(path) = &args.trace_out {
        write_jsonl(path, &traces)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Concept annotations (JSONL).
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value = "rqe")]
    pub task: TaskKind,
    /// Replacement template with `{canonical}` and `{type}` placeholders.
    #[arg(long, default_value = DEFAULT_TEMPLATE)]
    pub template: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_augment(args: &AugmentArgs) -> Result<()> {
    let template = Template::new(&args.template)?;
    let pairs = read_pairs(&args.pairs, args.task)?;
    let annotations =
        load_annotations(&args.annotations).with_context(|| format!("loading {}", args.annotations.display()))?;
    validate_annotations(&annotations, &pairs)?;
    let out = augment_dataset(&pairs, &annotations, &template)?;
    info!("{} pairs in, {} out", pairs.len(), out.len());
    save_pairs(&args.out, &out)
}

#[derive(Debug, Clone, Args)]
pub struct AssembleArgs {
    /// orig, data_aug, orig_plus_dataaug_plus_qqp, dataaug_plus_qqp or paraphrase.
    #[arg(long)]
    pub variant: TrainingVariant,
    /// Source as name=path; names are train, validation, annotations, qqp
    /// and paraphrase. A qqp source ending in .tsv is read as the raw
    /// six-column Quora dump.
    #[arg(long = "src", value_name = "NAME=PATH")]
    pub sources: Vec<String>,
    #[arg(long, default_value = "rqe")]
    pub task: TaskKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_QQP_TARGET)]
    pub qqp_target: usize,
    #[arg(long, default_value = DEFAULT_TEMPLATE)]
    pub template: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_source(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => bail!("source '{spec}' is not of the form name=path"),
    }
}

pub fn run_assemble(args: &AssembleArgs) -> Result<()> {
    let mut sources = TrainingSources::default();
    let mut seen = BTreeSet::new();
    for spec in &args.sources {
        let (name, path) = parse_source(spec)?;
        if !seen.insert(name.clone()) {
            bail!("source '{name}' given twice");
        }
        match name.as_str() {
            "train" => sources.train = Some(read_pairs(&path, args.task)?),
            "validation" => sources.validation = Some(read_pairs(&path, args.task)?),
            "paraphrase" => sources.paraphrase = Some(read_pairs(&path, args.task)?),
            "annotations" => {
                sources.annotations =
                    Some(load_annotations(&path).with_context(|| format!("loading {}", path.display()))?)
            }
            "qqp" if PairFormat::from_path(&path) == PairFormat::Tsv => {
                let (pairs, skipped) = load_qqp(&path)?;
                if skipped > 0 {
                    info!("skipped {skipped} QQP rows with a blank question");
                }
                sources.qqp = Some(pairs);
            }
            "qqp" => sources.qqp = Some(read_pairs(&path, args.task)?),
            other => bail!("unknown source name '{other}'"),
        }
    }
    let config = AugmentConfig {
        template: Template::new(&args.template)?,
        seed: args.seed,
        qqp_target_size: args.qqp_target,
    };
    let out = assemble_training_set(args.variant, &sources, &config)?;
    for (label, count) in label_counts(&out) {
        info!("{}: {count}", label.map_or("unlabeled", |l| l.as_str()));
    }
    save_pairs(&args.out, &out)
}

#[derive(Debug, Clone, Args)]
pub struct ConstrainArgs {
    /// NLI pairs carrying group ids.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Model probabilities for those pairs.
    #[arg(long)]
    pub preds: PathBuf,
    /// Which model to use when the prediction file holds several.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn single_model(
    preds: Vec<PredictionRecord>,
    wanted: Option<&str>,
    path: &Path,
) -> Result<(String, Vec<PredictionRecord>)> {
    let names: BTreeSet<&str> = preds.iter().map(|p| p.model_name.as_str()).collect();
    let name = match wanted {
        Some(name) if names.contains(name) => name.to_string(),
        Some(name) => bail!("{} has no predictions from model '{name}'", path.display()),
        None if names.len() == 1 => names.into_iter().next().unwrap_or_default().to_string(),
        None if names.is_empty() => bail!("{} holds no predictions", path.display()),
        None => bail!(
            "{} holds predictions from several models ({}); pick one with --model",
            path.display(),
            names.into_iter().collect::<Vec<_>>().join(", ")
        ),
    };
    let kept = preds.into_iter().filter(|p| p.model_name == name).collect();
    Ok((name, kept))
}

pub fn run_constrain(args: &ConstrainArgs) -> Result<()> {
    let pairs = read_pairs(&args.pairs, TaskKind::Nli)?;
    let preds = load_predictions(&args.preds, TaskKind::Nli)
        .with_context(|| format!("loading predictions from {}", args.preds.display()))?;
    let (_, preds) = single_model(preds, args.model.as_deref(), &args.preds)?;
    let outcome = constrain(&preds, &pairs)?;
    info!(
        "{} groups constrained, {} labels changed, {} malformed groups",
        outcome.report.groups_constrained,
        outcome.report.labels_changed,
        outcome.report.malformed_groups.len()
    );
    write_atomic(&args.out, |w| write_labels(w, &outcome.labels))?;
    if let Some(path) = &args.report {
        write_json(path, &outcome.report)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct EnsembleArgs {
    /// Per-model prediction or label files.
    #[arg(long, num_args = 1.., required = true)]
    pub preds: Vec<PathBuf>,
    #[arg(long, default_value = "rqe")]
    pub task: TaskKind,
    /// Model whose label wins ties.
    #[arg(long)]
    pub tie_break: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_ensemble(args: &EnsembleArgs) -> Result<()> {
    let mut models = Vec::with_capacity(args.preds.len());
    for path in &args.preds {
        let file = load_label_file(path, args.task).with_context(|| format!("loading {}", path.display()))?;
        let name = match file.model_name {
            Some(name) => name,
            None => path
                .file_stem()
                .and_then(|s| s.to_str())
                .context("cannot derive a model name from the file name")?
                .to_string(),
        };
        models.push((name, file.labels));
    }
    let results = majority_vote(&models, &args.tie_break)?;
    let ties = results.iter().filter(|r| r.tie_broken).count();
    info!("{} pairs voted by {} models, {ties} ties", results.len(), models.len());
    write_jsonl(&args.out, &results)
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Gold labels: a pairs file or a label file.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted labels, or probabilities (argmax is taken).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub task: TaskKind,
    /// JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Human-readable report.
    #[arg(long)]
    pub text_report: Option<PathBuf>,
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let gold = load_label_file(&args.gold, args.task).with_context(|| format!("loading {}", args.gold.display()))?;
    let pred = load_label_file(&args.pred, args.task).with_context(|| format!("loading {}", args.pred.display()))?;
    let report = evaluate(&gold.labels, &pred.labels, args.task)?;
    let text = report.to_text();
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    match &args.text_report {
        Some(path) => write_text(path, &text)?,
        None if args.report.is_none() => print!("{text}"),
        None => {}
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub task: TaskKind,
    /// Sharpens (< 1) or flattens (> 1) the overlap distribution.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// One stopword per line; the bundled English list is the default.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub model_name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_score(args: &ScoreArgs) -> Result<()> {
    let pairs = read_pairs(&args.pairs, args.task)?;
    let mut config = OverlapScorerConfig {
        temperature: args.temperature,
        ..OverlapScorerConfig::default()
    };
    if let Some(path) = &args.stopwords {
        config.stopwords = load_stopwords(path)?;
    }
    let mut scorer = OverlapScorer::new(args.task, config)?;
    if let Some(name) = &args.model_name {
        scorer = scorer.with_name(name.clone());
    }
    let records = pairs
        .iter()
        .map(|p| {
            Ok(PredictionRecord {
                pair_id: p.id.clone(),
                model_name: scorer.name().to_string(),
                probs: scorer.score(&ScoreQuery::new(Some(&p.id), &p.text_a, &p.text_b))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_atomic(&args.out, |w| write_predictions(w, &records))
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false, args = ["pairs", "answers"])]
pub struct StatsArgs {
    /// Report label, provenance and group counts of a pairs file.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value = "nli")]
    pub task: TaskKind,
    /// Report question count and average answer count/length.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// JSON output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

pub fn run_stats(args: &StatsArgs) -> Result<()> {
    match (&args.pairs, &args.answers) {
        (Some(path), _) => emit(args.out.as_deref(), &composition(&read_pairs(path, args.task)?)),
        (None, Some(path)) => {
            let answers = load_answers(path).with_context(|| format!("loading {}", path.display()))?;
            emit(args.out.as_deref(), &dataset_stats(&answers))
        }
        (None, None) => bail!("one of --pairs or --answers is required"),
    }
}

#[derive(Debug, Clone, Subcommand)]
pub enum RankCommand {
    /// Train a re-ranker on answers with relevance labels.
    Train(RankTrainArgs),
    /// Rank answers with a trained model.
    Apply(RankApplyArgs),
    /// Export the NLI and RQE sentence pairs an external model should score.
    Pairs(RankPairsArgs),
}

/// Where NLI and RQE scores come from: stored predictions when given,
/// otherwise the built-in overlap scorer.
#[derive(Debug, Clone, Default, Args)]
pub struct ScorerArgs {
    #[arg(long)]
    pub nli_preds: Option<PathBuf>,
    #[arg(long)]
    pub nli_model: Option<String>,
    #[arg(long)]
    pub rqe_preds: Option<PathBuf>,
    #[arg(long)]
    pub rqe_model: Option<String>,
}

fn build_scorer(task: TaskKind, preds: Option<&Path>, model: Option<&str>) -> Result<Box<dyn Scorer>> {
    match preds {
        Some(path) => {
            let records =
                load_predictions(path, task).with_context(|| format!("loading predictions from {}", path.display()))?;
            let (name, records) = single_model(records, model, path)?;
            Ok(Box::new(ExternalScorer::from_predictions(&records, &name, task)?))
        }
        None => Ok(Box::new(OverlapScorer::new(task, OverlapScorerConfig::default())?)),
    }
}

impl ScorerArgs {
    fn build(&self) -> Result<(Box<dyn Scorer>, Box<dyn Scorer>)> {
        Ok((
            build_scorer(TaskKind::Nli, self.nli_preds.as_deref(), self.nli_model.as_deref())?,
            build_scorer(TaskKind::Rqe, self.rqe_preds.as_deref(), self.rqe_model.as_deref())?,
        ))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RankTrainArgs {
    #[arg(long)]
    pub questions: PathBuf,
    #[arg(long)]
    pub answers: PathBuf,
    #[command(flatten)]
    pub scorers: ScorerArgs,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub regularization: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Training-set accuracy report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct TrainReport {
    examples: usize,
    relevant: usize,
    training_accuracy: f64,
}

pub fn run_rank_train(args: &RankTrainArgs) -> Result<()> {
    let questions = load_questions(&args.questions).with_context(|| format!("loading {}", args.questions.display()))?;
    let answers = load_answers(&args.answers).with_context(|| format!("loading {}", args.answers.display()))?;
    let (nli, rqe) = args.scorers.build()?;
    let params = Bm25Params { k1: args.k1, b: args.b };
    let config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        regularization: args.regularization,
        seed: args.seed,
    };
    let model = train_ranker(&questions, &answers, nli.as_ref(), rqe.as_ref(), &params, &config)?;
    let features = featurize(
        &questions,
        &answers,
        nli.as_ref(),
        rqe.as_ref(),
        &params,
        &model.source_vocab,
    )?;
    let examples: Vec<(Vec<f64>, bool)> = features
        .iter()
        .zip(&answers)
        .filter_map(|(f, a)| a.relevance.map(|r| (f.to_vec(), r)))
        .collect();
    let report = TrainReport {
        examples: examples.len(),
        relevant: examples.iter().filter(|(_, y)| *y).count(),
        training_accuracy: classification_accuracy(&model.linear, &examples)?,
    };
    info!(
        "trained on {} examples, training accuracy {:.4}",
        report.examples, report.training_accuracy
    );
    write_text(&args.model, &(model.to_json()? + "\n"))?;
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct RankApplyArgs {
    #[arg(long)]
    pub question_file: PathBuf,
    #[arg(long)]
    pub answers: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub scorers: ScorerArgs,
    /// One ranked list per question (JSONL).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_rank_apply(args: &RankApplyArgs) -> Result<()> {
    let questions =
        load_questions(&args.question_file).with_context(|| format!("loading {}", args.question_file.display()))?;
    let answers = load_answers(&args.answers).with_context(|| format!("loading {}", args.answers.display()))?;
    let model = RankerModel::load(&args.model).with_context(|| format!("loading model {}", args.model.display()))?;
    let (nli, rqe) = args.scorers.build()?;
    let ranked = rank_all(&questions, &answers, &model, nli.as_ref(), rqe.as_ref())?;
    write_jsonl(&args.out, &ranked)
}

#[derive(Debug, Clone, Args)]
pub struct RankPairsArgs {
    #[arg(long)]
    pub questions: PathBuf,
    #[arg(long)]
    pub answers: PathBuf,
    #[arg(long)]
    pub nli_out: PathBuf,
    #[arg(long)]
    pub rqe_out: PathBuf,
}

pub fn run_rank_pairs(args: &RankPairsArgs) -> Result<()> {
    let questions = load_questions(&args.questions).with_context(|| format!("loading {}", args.questions.display()))?;
    let answers = load_answers(&args.answers).with_context(|| format!("loading {}", args.answers.display()))?;
    let (nli, rqe) = sentence_pairs(&questions, &answers)?;
    save_pairs(&args.nli_out, &nli)?;
    save_pairs(&args.rqe_out, &rqe)
}

pub fn run_rank(command: &RankCommand) -> Result<()> {
    match command {
        RankCommand::Train(args) => run_rank_train(args),
        RankCommand::Apply(args) => run_rank_apply(args),
        RankCommand::Pairs(args) => run_rank_pairs(args),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FileKind {
    Pairs,
    Predictions,
    Labels,
    Annotations,
    Gazetteer,
    Answers,
    Questions,
    Qqp,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub kind: FileKind,
    #[arg(long, default_value = "nli")]
    pub task: TaskKind,
    /// Pairs file that annotations are checked against.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

/// Loads one file with the loader for `kind`; returns the record count.
pub fn validate_file(path: &Path, kind: FileKind, task: TaskKind, pairs: Option<&Path>) -> Result<usize> {
    Ok(match kind {
        FileKind::Pairs => read_pairs(path, task)?.len(),
        FileKind::Predictions => load_predictions(path, task)?.len(),
        FileKind::Labels => load_label_file(path, task)?.labels.len(),
        FileKind::Gazetteer => load_gazetteer(path)?.len(),
        FileKind::Answers => load_answers(path)?.len(),
        FileKind::Questions => load_questions(path)?.len(),
        FileKind::Qqp => load_qqp(path)?.0.len(),
        FileKind::Annotations => {
            let anns = load_annotations(path)?;
            if let Some(pairs) = pairs {
                validate_annotations(&anns, &read_pairs(pairs, task)?)?;
            }
            anns.len()
        }
    })
}

pub fn run_validate(args: &ValidateArgs) -> Result<()> {
    let mut failed = 0;
    for path in &args.files {
        match validate_file(path, args.kind, args.task, args.pairs.as_deref()) {
            Ok(n) => println!("ok\t{}\t{n} records", path.display()),
            Err(e) => {
                failed += 1;
                println!("invalid\t{}\t{e:#}", path.display());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} files failed validation", args.files.len());
    }
    Ok(())
}

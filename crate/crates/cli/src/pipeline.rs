//! Runs a chain of stages described by a TOML file.
//!
//! ```toml
//! seed = 13
//! task = "nli"
//!
//! [paths]
//! pairs = "data/pairs.jsonl"
//! expanded = "out/expanded.jsonl"
//!
//! [[stage]]
//! name = "expand"
//! kind = "expand"
//! inputs = { pairs = "pairs" }
//! outputs = { out = "expanded" }
//! params = { max_len = 6 }
//! ```
//!
//! Stages refer to files only by their name under `[paths]`; relative paths
//! are resolved against the directory holding the config. A stage runs after
//! every stage that produces one of its inputs. The global seed is the only
//! source of randomness.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use petgraph::Direction;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use medtext_core::augment::{TrainingVariant, DEFAULT_QQP_TARGET, DEFAULT_TEMPLATE};
use medtext_core::corpus::TaskKind;

use crate::commands::{
    run_assemble, run_augment, run_constrain, run_ensemble, run_eval, run_expand, run_rank_apply, run_rank_pairs,
    run_rank_train, run_score, run_stats, AssembleArgs, AugmentArgs, ConstrainArgs, EnsembleArgs, EvalArgs, ExpandArgs,
    RankApplyArgs, RankPairsArgs, RankTrainArgs, ScoreArgs, ScorerArgs, StatsArgs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Expand,
    Augment,
    Assemble,
    Score,
    Constrain,
    Ensemble,
    Eval,
    Stats,
    RankTrain,
    RankApply,
    RankPairs,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum PathRefs {
    One(String),
    Many(Vec<String>),
}

impl PathRefs {
    pub fn names(&self) -> &[String] {
        match self {
            PathRefs::One(name) => std::slice::from_ref(name),
            PathRefs::Many(names) => names,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub kind: StageKind,
    #[serde(default)]
    pub inputs: BTreeMap<String, PathRefs>,
    #[serde(default)]
    pub outputs: BTreeMap<String, PathRefs>,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub task: TaskKind,
    pub paths: BTreeMap<String, PathBuf>,
    #[serde(rename = "stage", default)]
    pub stages: Vec<StageConfig>,
}

struct Roles {
    inputs: &'static [(&'static str, bool)],
    outputs: &'static [(&'static str, bool)],
    params: &'static [&'static str],
}

const SCORER_INPUTS: [(&str, bool); 2] = [("nli_preds", false), ("rqe_preds", false)];

fn roles(kind: StageKind) -> Roles {
    match kind {
        StageKind::Expand => Roles {
            inputs: &[("pairs", true), ("gazetteer", false)],
            outputs: &[("out", true), ("trace_out", false)],
            params: &["task", "min_len", "max_len", "no_local"],
        },
        StageKind::Augment => Roles {
            inputs: &[("pairs", true), ("annotations", true)],
            outputs: &[("out", true)],
            params: &["task", "template"],
        },
        StageKind::Assemble => Roles {
            inputs: &[
                ("train", false),
                ("validation", false),
                ("annotations", false),
                ("qqp", false),
                ("paraphrase", false),
            ],
            outputs: &[("out", true)],
            params: &["task", "variant", "qqp_target", "template"],
        },
        StageKind::Score => Roles {
            inputs: &[("pairs", true), ("stopwords", false)],
            outputs: &[("out", true)],
            params: &["task", "temperature", "model_name"],
        },
        StageKind::Constrain => Roles {
            inputs: &[("pairs", true), ("preds", true)],
            outputs: &[("out", true), ("report", false)],
            params: &["model"],
        },
        StageKind::Ensemble => Roles {
            inputs: &[("preds", true)],
            outputs: &[("out", true)],
            params: &["task", "tie_break"],
        },
        StageKind::Eval => Roles {
            inputs: &[("gold", true), ("pred", true)],
            outputs: &[("report", false), ("text_report", false)],
            params: &["task"],
        },
        StageKind::Stats => Roles {
            inputs: &[("pairs", false), ("answers", false)],
            outputs: &[("out", true)],
            params: &["task"],
        },
        StageKind::RankTrain => Roles {
            inputs: &[
                ("questions", true),
                ("answers", true),
                SCORER_INPUTS[0],
                SCORER_INPUTS[1],
            ],
            outputs: &[("model", true), ("report", false)],
            params: &[
                "k1",
                "b",
                "epochs",
                "learning_rate",
                "regularization",
                "nli_model",
                "rqe_model",
            ],
        },
        StageKind::RankApply => Roles {
            inputs: &[
                ("questions", true),
                ("answers", true),
                ("model", true),
                SCORER_INPUTS[0],
                SCORER_INPUTS[1],
            ],
            outputs: &[("out", true)],
            params: &["nli_model", "rqe_model"],
        },
        StageKind::RankPairs => Roles {
            inputs: &[("questions", true), ("answers", true)],
            outputs: &[("nli_out", true), ("rqe_out", true)],
            params: &[],
        },
    }
}

fn check_roles(
    stage: &str,
    what: &str,
    given: &BTreeMap<String, PathRefs>,
    allowed: &[(&str, bool)],
    many: bool,
) -> Result<()> {
    for role in given.keys() {
        if !allowed.iter().any(|(r, _)| r == role) {
            let names: Vec<&str> = allowed.iter().map(|(r, _)| *r).collect();
            bail!(
                "stage '{stage}': unknown {what} '{role}' (expected one of: {})",
                names.join(", ")
            );
        }
    }
    for (role, required) in allowed {
        if *required && !given.contains_key(*role) {
            bail!("stage '{stage}': missing required {what} '{role}'");
        }
    }
    for (role, refs) in given {
        match refs {
            PathRefs::Many(names) if names.is_empty() => bail!("stage '{stage}': {what} '{role}' is empty"),
            PathRefs::Many(names) if names.len() > 1 && !many => {
                bail!("stage '{stage}': {what} '{role}' takes a single path")
            }
            _ => {}
        }
    }
    Ok(())
}

/// A validated pipeline: stages in execution order with resolved paths.
#[derive(Debug)]
pub struct Plan {
    pub seed: u64,
    pub task: TaskKind,
    pub stages: Vec<StageConfig>,
    paths: BTreeMap<String, PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Checks roles, path declarations and acyclicity, and orders the stages.
    pub fn plan(&self, base_dir: &Path) -> Result<Plan> {
        let mut names = BTreeSet::new();
        for stage in &self.stages {
            if !names.insert(stage.name.as_str()) {
                bail!("duplicate stage name '{}'", stage.name);
            }
            let r = roles(stage.kind);
            check_roles(
                &stage.name,
                "input",
                &stage.inputs,
                r.inputs,
                stage.kind == StageKind::Ensemble,
            )?;
            check_roles(&stage.name, "output", &stage.outputs, r.outputs, false)?;
            for key in stage.params.keys() {
                if !r.params.contains(&key.as_str()) {
                    bail!(
                        "stage '{}': unknown parameter '{key}' (expected one of: {})",
                        stage.name,
                        r.params.join(", ")
                    );
                }
            }
            for refs in stage.inputs.values().chain(stage.outputs.values()) {
                for name in refs.names() {
                    if !self.paths.contains_key(name) {
                        bail!("stage '{}' refers to undeclared path '{name}'", stage.name);
                    }
                }
            }
        }

        let mut graph = DiGraph::<usize, ()>::new();
        let nodes: Vec<_> = (0..self.stages.len()).map(|i| graph.add_node(i)).collect();
        let mut producer: HashMap<&str, usize> = HashMap::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for name in stage.outputs.values().flat_map(PathRefs::names) {
                if let Some(&other) = producer.get(name.as_str()) {
                    bail!(
                        "path '{name}' is written by both '{}' and '{}'",
                        self.stages[other].name,
                        stage.name
                    );
                }
                producer.insert(name, i);
            }
        }
        for (i, stage) in self.stages.iter().enumerate() {
            for name in stage.inputs.values().flat_map(PathRefs::names) {
                if let Some(&from) = producer.get(name.as_str()) {
                    graph.update_edge(nodes[from], nodes[i], ());
                }
            }
        }
        toposort(&graph, None).map_err(|cycle| {
            anyhow!(
                "stage graph has a cycle through '{}'",
                self.stages[graph[cycle.node_id()]].name
            )
        })?;

        // Among the stages whose inputs are ready, run the earliest declared.
        let mut done = vec![false; nodes.len()];
        let mut order = Vec::with_capacity(nodes.len());
        while order.len() < nodes.len() {
            let next = (0..nodes.len())
                .find(|&i| {
                    !done[i]
                        && graph
                            .neighbors_directed(nodes[i], Direction::Incoming)
                            .all(|p| done[graph[p]])
                })
                .expect("acyclic graph always has a ready stage");
            done[next] = true;
            order.push(next);
        }

        Ok(Plan {
            seed: self.seed,
            task: self.task,
            stages: order.into_iter().map(|i| self.stages[i].clone()).collect(),
            paths: self.paths.iter().map(|(k, v)| (k.clone(), base_dir.join(v))).collect(),
        })
    }
}

struct StageCtx<'a> {
    stage: &'a StageConfig,
    plan: &'a Plan,
}

impl StageCtx<'_> {
    fn resolve(&self, refs: Option<&PathRefs>) -> Vec<PathBuf> {
        refs.map(|r| r.names().iter().map(|n| self.plan.paths[n].clone()).collect())
            .unwrap_or_default()
    }

    fn input(&self, role: &str) -> Option<PathBuf> {
        self.resolve(self.stage.inputs.get(role)).into_iter().next()
    }

    fn inputs(&self, role: &str) -> Vec<PathBuf> {
        self.resolve(self.stage.inputs.get(role))
    }

    fn output(&self, role: &str) -> Option<PathBuf> {
        self.resolve(self.stage.outputs.get(role)).into_iter().next()
    }

    fn req_input(&self, role: &str) -> Result<PathBuf> {
        self.input(role)
            .ok_or_else(|| anyhow!("stage '{}': missing input '{role}'", self.stage.name))
    }

    fn req_output(&self, role: &str) -> Result<PathBuf> {
        self.output(role)
            .ok_or_else(|| anyhow!("stage '{}': missing output '{role}'", self.stage.name))
    }

    fn param<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.stage
            .params
            .get(key)
            .map(|v| {
                v.clone()
                    .try_into()
                    .with_context(|| format!("stage '{}': parameter '{key}'", self.stage.name))
            })
            .transpose()
    }

    fn param_or<T: DeserializeOwned>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.param(key)?.unwrap_or(default))
    }

    fn parsed<T: std::str::FromStr<Err = String>>(&self, key: &str) -> Result<Option<T>> {
        self.param::<String>(key)?
            .map(|s| {
                s.parse()
                    .map_err(|e: String| anyhow!("stage '{}': {e}", self.stage.name))
            })
            .transpose()
    }

    fn task(&self) -> Result<TaskKind> {
        Ok(self.parsed("task")?.unwrap_or(self.plan.task))
    }

    fn scorers(&self) -> Result<ScorerArgs> {
        Ok(ScorerArgs {
            nli_preds: self.input("nli_preds"),
            nli_model: self.param("nli_model")?,
            rqe_preds: self.input("rqe_preds"),
            rqe_model: self.param("rqe_model")?,
        })
    }
}

fn run_stage(ctx: &StageCtx<'_>) -> Result<()> {
    match ctx.stage.kind {
        StageKind::Expand => run_expand(&ExpandArgs {
            pairs: ctx.req_input("pairs")?,
            gazetteer: ctx.input("gazetteer"),
            task: ctx.task()?,
            min_len: ctx.param_or("min_len", 2)?,
            max_len: ctx.param_or("max_len", 6)?,
            no_local: ctx.param_or("no_local", false)?,
            out: ctx.req_output("out")?,
            trace_out: ctx.output("trace_out"),
        }),
        StageKind::Augment => run_augment(&AugmentArgs {
            pairs: ctx.req_input("pairs")?,
            annotations: ctx.req_input("annotations")?,
            task: ctx.task()?,
            template: ctx.param_or("template", DEFAULT_TEMPLATE.to_string())?,
            out: ctx.req_output("out")?,
        }),
        StageKind::Assemble => {
            let sources = ["train", "validation", "annotations", "qqp", "paraphrase"]
                .iter()
                .filter_map(|role| ctx.input(role).map(|p| format!("{role}={}", p.display())))
                .collect();
            run_assemble(&AssembleArgs {
                variant: ctx
                    .parsed::<TrainingVariant>("variant")?
                    .ok_or_else(|| anyhow!("stage '{}': parameter 'variant' is required", ctx.stage.name))?,
                sources,
                task: ctx.task()?,
                seed: ctx.plan.seed,
                qqp_target: ctx.param_or("qqp_target", DEFAULT_QQP_TARGET)?,
                template: ctx.param_or("template", DEFAULT_TEMPLATE.to_string())?,
                out: ctx.req_output("out")?,
            })
        }
        StageKind::Score => run_score(&ScoreArgs {
            pairs: ctx.req_input("pairs")?,
            task: ctx.task()?,
            temperature: ctx.param_or("temperature", 1.0)?,
            stopwords: ctx.input("stopwords"),
            model_name: ctx.param("model_name")?,
            out: ctx.req_output("out")?,
        }),
        StageKind::Constrain => run_constrain(&ConstrainArgs {
            pairs: ctx.req_input("pairs")?,
            preds: ctx.req_input("preds")?,
            model: ctx.param("model")?,
            out: ctx.req_output("out")?,
            report: ctx.output("report"),
        }),
        StageKind::Ensemble => run_ensemble(&EnsembleArgs {
            preds: ctx.inputs("preds"),
            task: ctx.task()?,
            tie_break: ctx
                .param("tie_break")?
                .ok_or_else(|| anyhow!("stage '{}': parameter 'tie_break' is required", ctx.stage.name))?,
            out: ctx.req_output("out")?,
        }),
        StageKind::Eval => run_eval(&EvalArgs {
            gold: ctx.req_input("gold")?,
            pred: ctx.req_input("pred")?,
            task: ctx.task()?,
            report: ctx.output("report"),
            text_report: ctx.output("text_report"),
        }),
        StageKind::Stats => {
            let (pairs, answers) = (ctx.input("pairs"), ctx.input("answers"));
            if pairs.is_some() == answers.is_some() {
                bail!(
                    "stage '{}': give exactly one of the inputs 'pairs' and 'answers'",
                    ctx.stage.name
                );
            }
            run_stats(&StatsArgs {
                pairs,
                task: ctx.task()?,
                answers,
                out: ctx.output("out"),
            })
        }
        StageKind::RankTrain => run_rank_train(&RankTrainArgs {
            questions: ctx.req_input("questions")?,
            answers: ctx.req_input("answers")?,
            scorers: ctx.scorers()?,
            k1: ctx.param_or("k1", 1.2)?,
            b: ctx.param_or("b", 0.75)?,
            epochs: ctx.param_or("epochs", 50)?,
            learning_rate: ctx.param_or("learning_rate", 0.1)?,
            regularization: ctx.param_or("regularization", 1e-3)?,
            seed: ctx.plan.seed,
            model: ctx.req_output("model")?,
            report: ctx.output("report"),
        }),
        StageKind::RankApply => run_rank_apply(&RankApplyArgs {
            question_file: ctx.req_input("questions")?,
            answers: ctx.req_input("answers")?,
            model: ctx.req_input("model")?,
            scorers: ctx.scorers()?,
            out: ctx.req_output("out")?,
        }),
        StageKind::RankPairs => run_rank_pairs(&RankPairsArgs {
            questions: ctx.req_input("questions")?,
            answers: ctx.req_input("answers")?,
            nli_out: ctx.req_output("nli_out")?,
            rqe_out: ctx.req_output("rqe_out")?,
        }),
    }
}

impl Plan {
    pub fn path(&self, name: &str) -> Option<&Path> {
        self.paths.get(name).map(PathBuf::as_path)
    }

    pub fn run(&self) -> Result<()> {
        for stage in &self.stages {
            info!("stage '{}' ({:?})", stage.name, stage.kind);
            run_stage(&StageCtx { stage, plan: self }).with_context(|| format!("stage '{}' failed", stage.name))?;
        }
        Ok(())
    }
}

/// Loads, validates and runs a pipeline config. `seed` overrides the one in
/// the file.
pub fn run_pipeline(config_path: &Path, seed: Option<u64>, dry_run: bool) -> Result<Plan> {
    let mut config = PipelineConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let base = config_path.parent().unwrap_or_else(|| Path::new("."));
    let plan = config.plan(base)?;
    if dry_run {
        for stage in &plan.stages {
            println!("{}\t{:?}", stage.name, stage.kind);
        }
    } else {
        plan.run()?;
    }
    Ok(plan)
}

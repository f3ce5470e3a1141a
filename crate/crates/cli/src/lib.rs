//! The `medtext` command line: one subcommand per pipeline stage plus
//! `pipeline`, which chains them from a TOML config.

pub mod commands;
pub mod output;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{
    run_assemble, run_augment, run_constrain, run_ensemble, run_eval, run_expand, run_rank, run_score, run_stats,
    run_validate, AssembleArgs, AugmentArgs, ConstrainArgs, EnsembleArgs, EvalArgs, ExpandArgs, RankCommand, ScoreArgs,
    StatsArgs, ValidateArgs,
};

/// Medical textual-entailment pipeline tools.
///
/// Set MEDTEXT_LOG (e.g. `info`, `debug`) for progress messages on stderr.
#[derive(Debug, Parser)]
#[command(name = "medtext", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand abbreviations from the other side of the pair and a gazetteer.
    Expand(ExpandArgs),
    /// Add a concept-template copy of every annotated pair.
    Augment(AugmentArgs),
    /// Build one of the training-set variants.
    Assemble(AssembleArgs),
    /// Score pairs with the built-in word-overlap scorer.
    Score(ScoreArgs),
    /// Force one label of each class per premise group.
    Constrain(ConstrainArgs),
    /// Majority vote over several models' labels.
    Ensemble(EnsembleArgs),
    /// Answer re-ranking.
    #[command(subcommand)]
    Rank(RankCommand),
    /// Accuracy, per-class and macro F1, and the confusion matrix.
    Eval(EvalArgs),
    /// Dataset composition.
    Stats(StatsArgs),
    /// Check files against their schema and invariants.
    Validate(ValidateArgs),
    /// Run the stages listed in a pipeline config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the execution order without running anything.
        #[arg(long)]
        dry_run: bool,
    },
}

pub fn execute(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Expand(args) => run_expand(args),
        Command::Augment(args) => run_augment(args),
        Command::Assemble(args) => run_assemble(args),
        Command::Score(args) => run_score(args),
        Command::Constrain(args) => run_constrain(args),
        Command::Ensemble(args) => run_ensemble(args),
        Command::Rank(cmd) => run_rank(cmd),
        Command::Eval(args) => run_eval(args),
        Command::Stats(args) => run_stats(args),
        Command::Validate(args) => run_validate(args),
        Command::Pipeline { config, seed, dry_run } => pipeline::run_pipeline(config, *seed, *dry_run).map(|_| ()),
    }
}

/// Parses `argv` and runs the command. Returns the process exit code: 0 on
/// success, 2 for usage errors, 1 for everything else.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

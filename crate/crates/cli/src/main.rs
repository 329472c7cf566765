mod commands;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

/// Severity scores that rank patient states and change smoothly over time.
#[derive(Debug, Parser)]
#[command(name = "smoothrank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a cohort of flu-like trajectories.
    Simulate(SimulateArgs),
    /// Sample comparison pairs and smoothness pairs from a dataset.
    GenPairs(GenPairsArgs),
    /// Train a linear severity score with Newton's method.
    TrainLdss(TrainLdssArgs),
    /// Train a tree-ensemble severity score by gradient boosting.
    TrainNldss(TrainNldssArgs),
    /// Train the sliding-window logistic regression baseline.
    TrainLr(TrainLrArgs),
    /// Fraction of comparison pairs a model orders correctly.
    EvalSoa(EvalArgs),
    /// Per-patient mortality AUC of a model.
    EvalAuc(EvalArgs),
    /// Per-sample trend features of a model's score trajectories.
    TrendFeatures(TrendArgs),
    /// Score changes before death or around treatment, with tests.
    StatsDeltas(DeltasArgs),
    /// Train/test transportability table over five treatment regimes.
    ReproTable1(Table1Args),
    /// Sweep the smoothness weight on coarse-grade supervision.
    SweepLambdaS(SweepArgs),
}

impl Command {
    fn name_and_out(&self) -> (&'static str, &PathBuf) {
        match self {
            Command::Simulate(a) => ("simulate", &a.common.out),
            Command::GenPairs(a) => ("gen-pairs", &a.common.out),
            Command::TrainLdss(a) => ("train-ldss", &a.common.out),
            Command::TrainNldss(a) => ("train-nldss", &a.common.out),
            Command::TrainLr(a) => ("train-lr", &a.common.out),
            Command::EvalSoa(a) => ("eval-soa", &a.common.out),
            Command::EvalAuc(a) => ("eval-auc", &a.common.out),
            Command::TrendFeatures(a) => ("trend-features", &a.common.out),
            Command::StatsDeltas(a) => ("stats-deltas", &a.common.out),
            Command::ReproTable1(a) => ("repro-table1", &a.common.out),
            Command::SweepLambdaS(a) => ("sweep-lambda-s", &a.common.out),
        }
    }

    fn run(&self) -> anyhow::Result<()> {
        match self {
            Command::Simulate(a) => simulate(a),
            Command::GenPairs(a) => gen_pairs(a),
            Command::TrainLdss(a) => train_ldss_cmd(a),
            Command::TrainNldss(a) => train_nldss_cmd(a),
            Command::TrainLr(a) => train_lr(a),
            Command::EvalSoa(a) => eval_soa(a),
            Command::EvalAuc(a) => eval_auc(a),
            Command::TrendFeatures(a) => trend(a),
            Command::StatsDeltas(a) => stats_deltas(a),
            Command::ReproTable1(a) => table1(a),
            Command::SweepLambdaS(a) => sweep(a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (name, out) = cli.command.name_and_out();
            // One line: the error chain joined with ": ".
            let message = format!("{name}: {e:#}").replace(['\n', '\r'], " ");
            runner::mark_failed(out, &message);
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

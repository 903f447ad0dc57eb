use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{
    AgentKind, BackendKind, ClassifierKind, EmbedderKind, OracleKind, RetrievalMethod, ScheduleArg,
};

/// Learn, consolidate and retrieve rules for tool-using agents.
#[derive(Debug, Parser)]
#[command(name = "rulekit", version)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Directory for reports.
    #[arg(long, global = true)]
    pub reports: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub gateway: Option<BackendKind>,
    /// Scripted replies for the mock gateway.
    #[arg(long, global = true)]
    pub gateway_script: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub agent: Option<AgentKind>,
    /// Scripted behaviour for the mock agent.
    #[arg(long, global = true)]
    pub agent_script: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propose rules from failure cases.
    Generate(GenerateArgs),
    /// Induce a vocabulary and translate the rule pool into symbolic form.
    Translate(TranslateArgs),
    /// Compress a symbolic library under the MDL objective.
    Consolidate(ConsolidateArgs),
    /// Pick alpha from a grid by post-consolidation accuracy.
    SelectAlpha(SelectAlphaArgs),
    /// Rank rules for queries read from stdin.
    Retrieve(RetrieveArgs),
    /// Run the agent over a dataset split, optionally with rules.
    Eval(EvalArgs),
    /// Paired comparison of two eval result files.
    Compare(CompareArgs),
    /// Build train / test-rand / test-unseen splits.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Failure cases to learn from.
    #[arg(long)]
    pub failures: Option<PathBuf>,
    /// Labelled cases; failures are collected by running the agent.
    #[arg(long, conflicts_with = "failures")]
    pub dataset: Option<PathBuf>,
    /// Output rule pool.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Output vocabulary.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output symbolic library.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub num_orderings: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConsolidationInputs {
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub failures: Option<PathBuf>,
    /// Per-rule correction matrix; built with the agent when absent.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub oracle_kind: Option<OracleKind>,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub max_passes: Option<usize>,
    /// Apply the best edit per pass, or each rule's edit immediately.
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
}

#[derive(Debug, Args)]
pub struct ConsolidateArgs {
    #[command(flatten)]
    pub inputs: ConsolidationInputs,
    #[arg(long, conflicts_with = "alpha_grid")]
    pub alpha: Option<f64>,
    /// Output library.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Merge rules by prompting the model instead of MDL search.
    #[arg(long)]
    pub prompt_baseline: bool,
}

#[derive(Debug, Args)]
pub struct SelectAlphaArgs {
    #[command(flatten)]
    pub inputs: ConsolidationInputs,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    #[arg(long, value_enum)]
    pub classifier: Option<ClassifierKind>,
    #[arg(long, value_enum)]
    pub method: Option<RetrievalMethod>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Evaluate only cases with this `split` label.
    #[arg(long)]
    pub split: Option<String>,
    /// Split file from `rulekit split`; use with --part.
    #[arg(long, conflicts_with = "split", requires = "part")]
    pub splits: Option<PathBuf>,
    #[arg(long, value_parser = ["train", "test-rand", "test-unseen"])]
    pub part: Option<String>,
    /// Library to retrieve from; omit or pass `none` to run without rules.
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Results file; defaults to eval.json in the reports directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub rand_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    pub unseen_fraction: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.inner());
            ExitCode::from(e.exit_code())
        }
    }
}

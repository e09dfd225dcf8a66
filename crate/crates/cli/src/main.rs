mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{CommandFactory, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "dmvfc", version, about = "Multi-view white-matter fiber clustering")]
pub struct Cli {
    /// Flat `key = value` file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (also DMVFC_THREADS; default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a labelled synthetic bundle or a jittered copy of one.
    Synth(commands::SynthArgs),
    /// Pretrain one view's encoder with the siamese loss.
    Pretrain(commands::PretrainArgs),
    /// Initialise centroids and run collaborative fine-tuning.
    Finetune(commands::FinetuneArgs),
    /// Assign clusters with the geometric encoder and FA fusion.
    Infer(commands::InferArgs),
    /// Intra-cluster correlation, alpha and ARI of a labelling.
    Eval(commands::EvalArgs),
    /// QuickBundles clustering.
    Baseline(commands::BaselineArgs),
    /// Cross-subject representative-pathway consistency.
    Consistency(commands::ConsistencyArgs),
    /// Finite-difference gradient check of encoders and losses.
    Gradcheck(commands::GradcheckArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Baseline(_) => "baseline",
            Command::Consistency(_) => "consistency",
            Command::Gradcheck(_) => "gradcheck",
        }
    }
}

/// Long flag names of a subcommand, which double as config keys.
fn config_keys(command: &str) -> Vec<String> {
    let cmd = Cli::command();
    cmd.find_subcommand(command)
        .map(|sub| {
            sub.get_arguments()
                .filter_map(|a| a.get_long().map(str::to_string))
                .filter(|k| k != "config" && k != "help")
                .collect()
        })
        .unwrap_or_default()
}

fn thread_count(flag: Option<usize>, file: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag.or(file) {
        return Ok(Some(n));
    }
    match std::env::var("DMVFC_THREADS") {
        Ok(v) => Ok(Some(v.trim().parse().context("DMVFC_THREADS must be a positive integer")?)),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let mut settings = settings::Settings::load(cli.config.as_deref(), &config_keys(name))?;
    let file_threads = settings.opt::<usize>("threads", None)?;
    if let Some(n) = thread_count(cli.threads, file_threads)? {
        anyhow::ensure!(n > 0, "thread count must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    settings.forget("threads");
    match cli.command {
        Command::Synth(a) => commands::synth(a, &mut settings),
        Command::Pretrain(a) => commands::pretrain(a, &mut settings),
        Command::Finetune(a) => commands::finetune(a, &mut settings),
        Command::Infer(a) => commands::infer(a, &mut settings),
        Command::Eval(a) => commands::eval(a, &mut settings),
        Command::Baseline(a) => commands::baseline(a, &mut settings),
        Command::Consistency(a) => commands::consistency(a, &mut settings),
        Command::Gradcheck(a) => commands::gradcheck(a, &mut settings),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dmvfc: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use callerkit::config::RunConfig;

/// Invocation-aware code generation toolkit: call-graph extraction, corpus
/// and benchmark construction, prompt rendering, and evaluation.
#[derive(Parser, Debug)]
#[command(name = "callerkit", version)]
pub struct Cli {
    /// Flat JSON configuration file; CALLERKIT_<KEY> variables override it.
    #[arg(long, global = true, env = "CALLERKIT_CONFIG_FILE")]
    pub config_file: Option<PathBuf>,
    /// Machine-readable reports on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Snapshot manifest repositories into the cache and apply selection filters.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the call graph of one repository.
    Extract {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the training corpus.
    Corpus(CorpusArgs),
    /// Length statistics of a corpus.
    Stats {
        corpus: PathBuf,
        /// Model-tokenizer counts keyed by instance id.
        #[arg(long)]
        tokens: Option<PathBuf>,
    },
    /// Derive caller-context variants for every corpus instance.
    Variants {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Structural classification of call sites in benchmark tasks.
    UsageStats {
        #[arg(long)]
        bench: PathBuf,
    },
    /// Render prompts for tasks or corpus instances.
    Render {
        #[arg(long)]
        tasks: PathBuf,
        /// Enabled fields: header, header+nl, header+caller, header+caller+nl.
        #[arg(long = "config", default_value = "header+caller+nl")]
        fields: String,
        #[arg(long, default_value = "structured")]
        style: String,
        #[arg(long, default_value = "1")]
        n_test: String,
        /// Synthesize a minimal invocation when a task has no caller.
        #[arg(long)]
        synthesize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark construction and checks.
    Bench {
        #[command(subcommand)]
        action: BenchAction,
    },
    /// Execute candidates against task drivers and report pass@k.
    Eval(EvalArgs),
    /// CodeBLEU and ROUGE-L for candidate/reference pairs.
    Metrics {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    /// Manifest whose train-split repositories feed the corpus.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Benchmark manifest checked for repository overlap.
    #[arg(long)]
    pub bench_manifest: Option<PathBuf>,
    /// Local repository directories used as-is (no filters).
    #[arg(long)]
    pub repo: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub n_train: usize,
    #[arg(long)]
    pub two_hop: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum BenchAction {
    /// Assemble tasks from benchmark repositories and test fragments.
    Build {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Training manifest checked for repository overlap.
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        #[arg(long)]
        repo: Vec<PathBuf>,
        #[arg(long)]
        fragments: PathBuf,
        /// Skip running drivers against the reference implementation.
        #[arg(long)]
        no_sanity: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check suites for pattern, requirement, and evidence coverage.
    Lint {
        #[arg(long)]
        tasks: PathBuf,
    },
    /// Run every driver against the reference implementation.
    Sanity {
        #[arg(long)]
        tasks: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    pub k: Vec<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = RunConfig::load(cli.config_file.as_deref()).and_then(|cfg| commands::run(&cli, cfg));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

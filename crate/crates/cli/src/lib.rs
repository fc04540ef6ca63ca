//! Command-line front end: argument definitions, file plumbing and the
//! timeline plot. `run` returns what the binary prints on standard output.

pub mod commands;
pub mod io;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "bead", version, about = "Voice and tick regulation for notation measures")]
pub struct Cli {
    /// Worker threads for per-measure parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More diagnostics on standard error (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve measures from cluster JSON and print solution JSON.
    Regulate(RegulateArgs),
    /// Print quality reports, or apply a fix and print the before/after block.
    Evaluate(EvaluateArgs),
    /// Compare predicted solutions against gold.
    Compare(CompareArgs),
    /// Write a synthetic corpus of topology samples and cluster inputs.
    Generate(GenerateArgs),
    /// Tick vector codec.
    #[command(subcommand)]
    Vtick(VtickCommand),
    /// Measure DSL tools.
    #[command(subcommand)]
    Paraff(ParaffCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Greedy,
    RulebasedSearch,
    Oracle,
    /// Replay a precomputed score table (`--table`).
    Table,
}

#[derive(Debug, Args)]
pub struct RegulateArgs {
    /// Cluster JSON: one measure or an array of measures.
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "rulebased-search")]
    pub strategy: Strategy,
    /// Run one pass per quota factor in the multipass schedule and keep the best.
    #[arg(long)]
    pub multipass: bool,
    /// Re-estimate durations with a glimpse query before searching.
    #[arg(long)]
    pub pre_pass: bool,
    #[arg(long, default_value_t = 1.0)]
    pub pt_factor: f64,
    #[arg(long, default_value_t = 40.0)]
    pub quota_factor: f64,
    #[arg(long, default_value_t = 0.02)]
    pub stop_loss: f64,
    /// Accepted for interface symmetry; the solver has no random state.
    #[arg(long, env = "BEAD_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Gold topology samples or solutions, required by the oracle.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Score table for `--strategy table`.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// JSON-lines solution cache to consult and update.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Write the timeline plot here; with several measures the measure index
    /// is inserted before the extension.
    #[arg(long)]
    pub emit_svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Solution JSON: one measure or an array.
    pub solution: PathBuf,
    /// Fix JSON to apply before re-evaluating.
    #[arg(long)]
    pub patch: Option<PathBuf>,
    /// Print the fix outcome as JSON instead of the text block.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub pred: PathBuf,
    /// Gold solutions or topology samples.
    pub gold: PathBuf,
    #[arg(long)]
    pub per_measure: bool,
    /// Print pooled metrics as JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, env = "BEAD_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub min_voices: u8,
    #[arg(long, default_value_t = 4)]
    pub max_voices: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum VtickCommand {
    /// Encode a tick; ticks past 1919 get a whole-note quotient.
    Encode { tick: u32 },
    /// Decode a 13-entry vector (soft values allowed).
    Decode {
        #[arg(num_args = 13, allow_negative_numbers = true)]
        vector: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        quotient: u32,
    },
}

#[derive(Debug, Subcommand)]
pub enum ParaffCommand {
    /// Parse sentences (one per line) and print decoded topology samples.
    Parse {
        file: PathBuf,
        /// Layout seed for the synthetic geometry.
        #[arg(long, env = "BEAD_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Print sampled sentences, one per line.
    Sample {
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, env = "BEAD_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        min_voices: u8,
        #[arg(long, default_value_t = 4)]
        max_voices: u8,
    },
}

/// Execute a parsed command line, returning standard output.
pub fn run(cli: Cli) -> anyhow::Result<String> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        pool = pool.num_threads(jobs.max(1));
    }
    pool.build()?.install(|| match cli.command {
        Command::Regulate(a) => commands::regulate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Vtick(c) => commands::vtick(&c),
        Command::Paraff(c) => commands::paraff(&c),
    })
}

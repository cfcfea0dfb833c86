//! `mdhc`: condense hierarchies, generate synthetic features, train and
//! evaluate gated heads from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mdhc::dataio::FeatureFormat;
use mdhc::CondensedHierarchy;

mod commands;

pub use commands::{
    CondenseArgs, EvalArgs, GenSynthArgs, GradcheckArgs, InspectArgs, ParamcountArgs, PredictArgs, TrainArgs,
};

#[derive(Debug, Parser)]
#[command(name = "mdhc", version, about = "Multilayer gated heads over condensed label hierarchies")]
pub struct Cli {
    /// Worker threads for batch work (default: all cores). Use 1 for
    /// bitwise-reproducible runs.
    #[arg(long, global = true, env = "MDHC_THREADS")]
    pub threads: Option<usize>,

    /// Seed for every random choice a subcommand makes.
    #[arg(long, global = true, env = "MDHC_SEED")]
    pub seed: Option<u64>,

    /// Reduce gradients in a fixed order.
    #[arg(long, global = true, env = "MDHC_DETERMINISTIC", num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,

    /// Feature file format.
    #[arg(long, global = true, env = "MDHC_FORMAT", value_enum, default_value_t = Format::Bin)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Condense a raw ontology into a tree.
    Condense(CondenseArgs),
    /// Write a synthetic hierarchical Gaussian dataset.
    GenSynth(GenSynthArgs),
    /// Train a gated or flat head.
    Train(TrainArgs),
    /// Score a checkpoint or a prediction file.
    Eval(EvalArgs),
    /// Write one prediction line per example.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Count head parameters.
    Paramcount(ParamcountArgs),
    /// Summarize a hierarchy, checkpoint or feature file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Bin,
    Csv,
}

impl From<Format> for FeatureFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Bin => FeatureFormat::Bin,
            Format::Csv => FeatureFormat::Csv,
        }
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    pub format: FeatureFormat,
}

impl Globals {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("could not configure the thread pool")?;
    }
    let g = Globals { seed: cli.seed, deterministic: cli.deterministic, format: cli.format.into() };
    match cli.command {
        Command::Condense(a) => commands::condense(a),
        Command::GenSynth(a) => commands::gen_synth(a, &g),
        Command::Train(a) => commands::train(a, &g),
        Command::Eval(a) => commands::eval(a, &g),
        Command::Predict(a) => commands::predict(a, &g),
        Command::Gradcheck(a) => commands::gradcheck(a, &g),
        Command::Paramcount(a) => commands::paramcount(a),
        Command::Inspect(a) => commands::inspect(a, &g),
    }
}

pub(crate) fn read_hierarchy(path: &Path) -> Result<CondensedHierarchy> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CondensedHierarchy::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

pub(crate) fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

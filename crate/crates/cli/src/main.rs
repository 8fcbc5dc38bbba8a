//! `alti`: token attributions, alignment evaluation and diagnostics for
//! encoder-decoder Transformers stored in the ALTIWGT1 format.
//!
//! Exit status is 0 on success, 1 on a runtime or data error and 2 on a
//! usage error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "alti",
    version,
    about = "Input attributions for encoder-decoder Transformers"
)]
pub struct Cli {
    /// Model file (ALTIWGT1).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,

    /// Arithmetic precision of the forward pass and decomposition.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,

    /// Emit JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    /// Layer to analyse, counted from 1.
    #[arg(long, global = true)]
    pub layer: Option<usize>,

    /// Worker threads for per-sentence parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Cross-attention contributions.
    Alti,
    /// Cross-attention weights averaged over heads.
    Attention,
    /// Norms of the attention-weighted value vectors.
    NormF,
    /// Norms of the transformed vectors.
    NormT,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Source and target-prefix relevance of every predicted token.
    Attribute(AttributeArgs),
    /// Alignment error rate of alignments extracted from one decoder layer.
    EvaluateAer(EvaluateArgs),
    /// Correlation between cross-attention on the source </s> and the residual share.
    AnalyzeEos(EosArgs),
    /// Flag translations that collapse when <unk> is forced into the prefix.
    DetectHallucination(HallucinationArgs),
    /// Share of each source token kept at its own position through the encoder.
    InspectEncoder(InspectArgs),
    /// Write a seeded random model, handy for trying the other commands.
    ToyModel(ToyArgs),
}

#[derive(Args, Debug)]
pub struct AttributeArgs {
    /// Source corpus: one sentence of token ids per line.
    #[arg(long)]
    pub source: PathBuf,
    /// Forced target corpus; greedy decoding is used when absent.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Maximum generated length for greedy decoding.
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    /// Also write one heatmap CSV per sentence into this directory.
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Gold alignments: `i-j` sure and `i?j` possible links, 1-based.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Alti)]
    pub method: Method,
}

#[derive(Args, Debug)]
pub struct EosArgs {
    #[arg(long)]
    pub source: PathBuf,
    /// Forced target corpus; greedy decoding is used when absent.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
}

#[derive(Args, Debug)]
pub struct HallucinationArgs {
    #[arg(long)]
    pub source: PathBuf,
    /// Reference translations, one per source line.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub min_bleu: f64,
    #[arg(long, default_value_t = 3.0)]
    pub max_bleu: f64,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub source: PathBuf,
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 24)]
    pub vocab: usize,
    /// Use learned position tables instead of sinusoids.
    #[arg(long)]
    pub learned_positions: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            use clap::CommandFactory;
            Cli::command()
                .error(clap::error::ErrorKind::MissingRequiredArgument, msg)
                .exit()
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

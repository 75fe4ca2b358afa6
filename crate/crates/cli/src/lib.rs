//! Command-line harness for the axialvig crate: verification suites, cost
//! accounting, forward passes and graph-construction benchmarks.
//!
//! Every subcommand prints line-delimited `key=value` records to stdout and can
//! write a JSON report (see [`report`]). Exit codes: 0 success, 1 verification
//! failure, 2 usage, configuration or I/O error.

pub mod bench;
pub mod check;
pub mod commands;
pub mod report;

use std::path::PathBuf;

use axialvig::graph::GraphMethod;
use axialvig::gradcheck::BlockUnderTest;
use axialvig::tensor::DType;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{run, Outcome};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "axialvig", version, about = "Axial-graph vision backbone toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time graph construction and aggregation for each method.
    BenchGraph(BenchArgs),
    /// Run the oracle-equivalence and invariant suites.
    Check(CheckArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Print parameter and MAC counts per stage.
    Count(CountArgs),
    /// Run a forward pass and print the top-5 classes.
    Forward(ForwardArgs),
    /// Write freshly initialized weights and print their manifest.
    Init(InitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Dagc,
    Svga,
    Knn,
    All,
}

impl MethodArg {
    pub fn methods(self) -> Vec<GraphMethod> {
        match self {
            MethodArg::Dagc => vec![GraphMethod::Dagc],
            MethodArg::Svga => vec![GraphMethod::Svga],
            MethodArg::Knn => vec![GraphMethod::Knn],
            MethodArg::All => GraphMethod::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F32 => DType::F32,
            DTypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Oracle,
    Invariants,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BlockArg {
    Dagc,
    Grapher,
    Ffn,
    Mbconv,
    DagcMbconv,
}

impl From<BlockArg> for BlockUnderTest {
    fn from(b: BlockArg) -> Self {
        match b {
            BlockArg::Dagc => BlockUnderTest::Dagc,
            BlockArg::Grapher => BlockUnderTest::Grapher,
            BlockArg::Ffn => BlockUnderTest::Ffn,
            BlockArg::Mbconv => BlockUnderTest::Mbconv,
            BlockArg::DagcMbconv => BlockUnderTest::DagcMbconv,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long = "height", short = 'H', default_value_t = 56)]
    pub height: usize,
    #[arg(long = "width", short = 'W', default_value_t = 56)]
    pub width: usize,
    #[arg(long = "channels", short = 'C', default_value_t = 48)]
    pub channels: usize,
    #[arg(long, short = 'K', default_value_t = 8)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 30)]
    pub repeats: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DTypeArg::F32)]
    pub dtype: DTypeArg,
    /// JSON report path.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    pub suite: SuiteArg,
    /// Seeds per grid point.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub block: BlockArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Start from an all-zero input, which puts every mask entry on a tie.
    #[arg(long)]
    pub tie_input: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "model_source", required = true, multiple = false)]
pub struct ModelArgs {
    /// Predefined model: S, M, B or toy.
    #[arg(long, group = "model_source")]
    pub model: Option<String>,
    /// Model config file in key = value form.
    #[arg(long, group = "model_source")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Input resolution; defaults to the model's own.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "input_source", required = true, multiple = false)]
pub struct InputArgs {
    /// Input images as a GVT tensor of shape (N, 3, R, R).
    #[arg(long, group = "input_source")]
    pub input: Option<PathBuf>,
    /// Draw uniform [-1, 1) images from this seed.
    #[arg(long, group = "input_source")]
    pub random: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Batch size for --random.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// GVT weight bundle; without it weights come from --init-seed.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    #[arg(long, value_enum, default_value_t = DTypeArg::F32)]
    pub dtype: DTypeArg,
    /// Logits as a GVT tensor.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DTypeArg::F32)]
    pub dtype: DTypeArg,
    /// GVT weight bundle to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the manifest as text.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

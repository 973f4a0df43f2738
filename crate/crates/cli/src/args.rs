//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "spikemesh",
    version,
    about = "Cycle-level simulator for an elastic spiking-NN accelerator on a 2D mesh"
)]
pub struct Cli {
    /// JSON config file; defaults to $SPIKEMESH_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a random desk-scale quantized network (and optional
    /// labeled dataset).
    Gen(GenArgs),
    /// Partition, place, and route a network onto the mesh.
    Map(MapArgs),
    /// Run one cycle-level inference and write report files.
    Sim(SimArgs),
    /// Sweep one configuration axis and aggregate a CSV.
    Compare(CompareArgs),
    /// Summarize a report.json on stdout.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum KindArg {
    Cnn,
    Mlp,
    Transformer,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "cnn")]
    pub kind: KindArg,
    /// Matrix layers in the stack (classifier head excluded).
    #[arg(long, default_value_t = 3)]
    pub layers: u32,
    /// Channels (cnn) or feature width (mlp/transformer).
    #[arg(long, default_value_t = 3)]
    pub width: u32,
    #[arg(long, default_value_t = 4)]
    pub classes: u32,
    /// Allowed maximum time-steps.
    #[arg(long, default_value_t = 32)]
    pub time_steps: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.6)]
    pub density: f64,
    #[arg(long, default_value_t = false)]
    pub residual: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also emit a labeled dataset with this many samples.
    #[arg(long)]
    pub dataset: Option<usize>,
    #[arg(long)]
    pub dataset_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub mesh_rows: Option<u32>,
    #[arg(long)]
    pub mesh_cols: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Assumed spike density for the analytic traffic estimate.
    #[arg(long)]
    pub density: Option<f64>,
    /// Core memory capacity in bytes.
    #[arg(long)]
    pub mem_capacity: Option<u64>,
    /// Neuron circuits per core.
    #[arg(long)]
    pub circuit_capacity: Option<u64>,
    /// Re-estimate traffic from one measured simulation pass.
    #[arg(long, default_value_t = false)]
    pub measured: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Run-configuration flags shared by `sim` and `compare`. Unset flags fall
/// back to the config file, then to built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct RunFlags {
    #[arg(long)]
    pub pipeline: Option<String>,
    #[arg(long)]
    pub product: Option<String>,
    #[arg(long)]
    pub aer: Option<String>,
    #[arg(long)]
    pub routing: Option<String>,
    #[arg(long)]
    pub flit_bits: Option<u32>,
    #[arg(long)]
    pub link_bandwidth: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub energy_model: Option<PathBuf>,
    #[arg(long)]
    pub injection_multiplier: Option<u32>,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    /// Input file: {"values": [...]} or a dataset (with --index).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Sample index when --input points at a dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Generate a random input with this seed instead of --input.
    #[arg(long)]
    pub input_seed: Option<u64>,
    /// Run with confidence-based early termination at the configured theta.
    #[arg(long, default_value_t = false)]
    pub elastic: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Binary dump of the bit-exact bundled flits.
    #[arg(long)]
    pub dump_flits: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Axis: pipeline | product | aer | routing | flit_bits | theta |
    /// injection_rate.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<String>,
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub mapping: PathBuf,
    /// Labeled dataset for latency/FCR/mismatch statistics.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Cap on dataset samples per axis value.
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    #[arg(long)]
    pub input_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub report: PathBuf,
}

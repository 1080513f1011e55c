//! Command-line flags of the `pidd` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pidd", version, about = "Multi-shot diffusion MRI synthesis, reconstruction and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset.
    Synth(SynthArgs),
    /// Reconstruct every sample of a dataset.
    Recon(ReconArgs),
    /// Train the unrolled network on a dataset.
    Train(TrainArgs),
    /// Compute metrics for one or more reconstructions.
    Eval(EvalArgs),
    /// Render tensors or modulation mosaics as 16-bit PGM.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline configuration (JSON); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Worker threads for per-sample work.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<u64>,
    /// Square grid size.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub coils: Option<usize>,
    #[arg(long)]
    pub phase_order: Option<usize>,
    /// Comma-separated b-values in s/mm^2.
    #[arg(long, value_delimiter = ',')]
    pub b: Option<Vec<f64>>,
    /// Diffusion directions as `x,y,z` triples separated by `;`.
    #[arg(long)]
    pub dirs: Option<String>,
    /// SNR range `LO:HI` in dB, or `none` for noiseless data.
    #[arg(long)]
    pub snr: Option<String>,
    /// Partial-Fourier rate in (0, 1].
    #[arg(long)]
    pub pf: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Zf,
    PocsOracle,
    Lowrank,
    Pidd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Zf => "zf",
            Method::PocsOracle => "pocs-oracle",
            Method::Lowrank => "lowrank",
            Method::Pidd => "pidd",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReconArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Training output or weights directory (for `pidd`).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub svt_rank: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub pf_repeats: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub ksize: Option<usize>,
    #[arg(long)]
    pub share_weights: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub loss_floor: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Reconstruction directories; may be repeated.
    #[arg(long, required = true)]
    pub recon: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of `gsr,psnr`.
    #[arg(long, default_value = "gsr,psnr")]
    pub metrics: String,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Magnitude,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mosaic {
    /// Phase modulations from a sample's stored shot phases.
    Modulations,
    /// Effective modulations of trained weights.
    Learned,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// PARR tensor holding a 2-D image.
    #[arg(long, conflicts_with = "mosaic")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "magnitude")]
    pub kind: Kind,
    #[arg(long, value_enum, requires = "sample")]
    pub mosaic: Option<Mosaic>,
    /// Sample directory for mosaics.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Output PGM path; the scaling goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "twinbeam",
    version,
    about = "Photon-number statistics of twin beams"
)]
pub struct Cli {
    /// Worker threads for parallel stages (defaults to one per core).
    #[arg(long, global = true, env = "TWINBEAM_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a model joint photon-number distribution.
    Generate(GenerateArgs),
    /// Map a joint distribution through the detection chains.
    Forward(ForwardArgs),
    /// Simulate a coincidence histogram shot by shot.
    Sample(SampleArgs),
    /// Reconstruct the joint distribution from a histogram by EM.
    Reconstruct(ReconstructArgs),
    /// Print correlation and fluctuation statistics of any artifact.
    Analyze(AnalyzeArgs),
    /// Evaluate an s-ordered joint intensity distribution on a grid.
    Intensity(IntensityArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Poisson,
    Gaussian,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub model: Model,
    /// Mean number of photon pairs.
    #[arg(long, allow_negative_numbers = true)]
    pub mu: f64,
    /// Probability mass allowed to fall outside the stored table.
    #[arg(long, default_value_t = twinbeam::pnd::DEFAULT_TRUNCATION)]
    pub truncation: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Detection chain of both arms. An arm is in the finite-detector mode when
/// its detector count is given.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ChainArgs {
    /// Overall efficiency T eta of the signal arm.
    #[arg(long)]
    pub t_eta_s: f64,
    /// Overall efficiency T eta of the idler arm.
    #[arg(long)]
    pub t_eta_i: f64,
    /// Mean noise counts D of the signal arm (many-pixel limit).
    #[arg(long, default_value_t = 0.0)]
    pub noise_s: f64,
    /// Mean noise counts D of the idler arm (many-pixel limit).
    #[arg(long, default_value_t = 0.0)]
    pub noise_i: f64,
    /// Number of detectors N behind the signal multiport.
    #[arg(long)]
    pub detectors_s: Option<usize>,
    /// Number of detectors N behind the idler multiport.
    #[arg(long)]
    pub detectors_i: Option<usize>,
    /// Per-detector dark-count probability d in the signal arm.
    #[arg(long, default_value_t = 0.0)]
    pub dark_s: f64,
    /// Per-detector dark-count probability d in the idler arm.
    #[arg(long, default_value_t = 0.0)]
    pub dark_i: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ForwardArgs {
    /// Joint photon-number distribution (joint_pnd file).
    #[arg(long)]
    pub pnd: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Largest signal count kept in the histogram (chosen automatically if omitted).
    #[arg(long, requires = "c_max_i")]
    pub c_max_s: Option<usize>,
    #[arg(long, requires = "c_max_s")]
    pub c_max_i: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub pnd: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long)]
    pub shots: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    /// Coincidence histogram (coincidence_distribution file).
    #[arg(long)]
    pub hist: PathBuf,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Reconstruction support in the signal arm (heuristic if omitted).
    #[arg(long)]
    pub n_max_s: Option<usize>,
    #[arg(long)]
    pub n_max_i: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub max_iterations: usize,
    /// Relative KL decrease per step below which iteration stops.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// Starting distribution (joint_pnd file); uniform if omitted.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Any artifact written by this tool.
    pub file: PathBuf,
    /// Also write the sum and difference distributions as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct IntensityArgs {
    /// Joint photon-number distribution (joint_pnd or em_result file).
    #[arg(long)]
    pub pnd: PathBuf,
    /// Ordering parameter in [-1, 1).
    #[arg(long, allow_negative_numbers = true)]
    pub s: f64,
    /// Grid extent in both intensities (chosen from the mean photon numbers if omitted).
    #[arg(long)]
    pub w_max: Option<f64>,
    #[arg(long, default_value_t = twinbeam::intensity::DEFAULT_POINTS)]
    pub points: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the grid as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

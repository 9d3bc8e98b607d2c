//! Command-line front end.
//!
//! Every subcommand validates its flags, writes into a staging directory,
//! adds `run_manifest.json`, and only then moves the results into
//! `--out-dir`. Exit codes: 0 success, 1 validation error or bad usage,
//! 2 I/O error.

mod commands;
mod stage;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pdsm::attribution::BaselineMode;
use pdsm::discretize::{Pool, Preset};
use pdsm::model::train::Optimizer;
use pdsm::synthgen::CorruptionKind;
use pdsm::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "pdsm", version, about = "Phoneme-discretized saliency maps")]
pub struct Cli {
    /// Master seed for every random stream of the command.
    #[arg(long, global = true, env = "PDSM_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Directory receiving the command's outputs.
    #[arg(long, global = true, default_value = "pdsm-out")]
    pub out_dir: PathBuf,

    /// Worker threads for per-sample stages (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth.
    GenSynth(GenSynthArgs),
    /// Train the toy classifier on a dataset's train split.
    Train(TrainArgs),
    /// Compute saliency maps for dataset samples.
    Attribute(AttributeArgs),
    /// Turn one saliency map into a phoneme mask.
    Discretize(DiscretizeArgs),
    /// Faithfulness of one mask on one input.
    Evaluate(EvaluateArgs),
    /// Faithfulness against the number of retained phonemes.
    SweepK(SweepArgs),
    /// Duration-normalized phoneme importance over a dataset.
    GlobalImportance(ImportanceArgs),
    /// Per-sample phoneme ranking.
    Rank(RankArgs),
    /// Method-level faithfulness table from a sweep.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Noise,
    Fakephoneme,
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    #[arg(value_enum)]
    pub task: Task,
    /// JSON file with generator settings; flags below override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub freq_bins: Option<usize>,
    /// Speech-to-noise ratio inside the noise window (noise task).
    #[arg(long)]
    pub snr_db: Option<f64>,
    #[arg(long, value_enum)]
    pub corruption_kind: Option<CorruptionArg>,
    #[arg(long)]
    pub corruption_gain: Option<f64>,
    /// Corrupted segments per fake sample.
    #[arg(long)]
    pub n_corrupt: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionArg {
    AdditiveNoise,
    SpectralTilt,
}

impl From<CorruptionArg> for CorruptionKind {
    fn from(c: CorruptionArg) -> Self {
        match c {
            CorruptionArg::AdditiveNoise => CorruptionKind::AdditiveNoise,
            CorruptionArg::SpectralTilt => CorruptionKind::SpectralTilt,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Sgd,
    SgdMomentum,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::SgdMomentum => Optimizer::SgdMomentum,
        }
    }
}

/// Which dataset entries a command works on.
#[derive(Debug, Args, Serialize)]
pub struct SampleFilter {
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Class whose probability is explained.
    #[arg(long, default_value_t = 1)]
    pub target_class: usize,
    /// Include samples of every label, not only those of the target class.
    #[arg(long)]
    pub all_labels: bool,
    /// Keep only the first N selected samples (in sample-id order).
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    /// Model directory written by `train`.
    #[arg(long)]
    #[serde(skip)]
    pub model: PathBuf,
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    /// Method name, or `all`. Repeatable.
    #[arg(long = "method", default_value = "all")]
    pub methods: Vec<String>,
    /// JSON file with attribution settings; flags below override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Integrated-gradients path steps [default: 128].
    #[arg(long)]
    pub ig_steps: Option<usize>,
    /// GradientSHAP samples [default: 32].
    #[arg(long)]
    pub gradshap_samples: Option<usize>,
    /// GradientSHAP input noise [default: 0.1 x input std].
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    #[command(flatten)]
    pub filter: SampleFilter,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineArg {
    Zero,
    DatasetMean,
}

impl From<BaselineArg> for BaselineMode {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Zero => BaselineMode::Zero,
            BaselineArg::DatasetMean => BaselineMode::DatasetMean,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetArg {
    Tt2,
    Fs2,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tt2 => Preset::Tt2,
            PresetArg::Fs2 => Preset::Fs2,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolArg {
    Mean,
    Sum,
    Max,
}

impl From<PoolArg> for Pool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Mean => Pool::Mean,
            PoolArg::Sum => Pool::Sum,
            PoolArg::Max => Pool::Max,
        }
    }
}

/// Discretization settings shared by several subcommands.
#[derive(Debug, Args, Serialize)]
pub struct PdsmArgs {
    #[arg(long, value_enum, default_value = "tt2")]
    pub preset: PresetArg,
    /// Override the preset's pooling.
    #[arg(long, value_enum)]
    pub pool: Option<PoolArg>,
    /// Override the preset's quantile threshold.
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Never select silence segments.
    #[arg(long)]
    pub exclude_silence: bool,
}

/// A single saliency map with its posteriorgram.
#[derive(Debug, Args)]
pub struct MapInput {
    /// Saliency map (.npy, F x T).
    #[arg(long)]
    pub map: PathBuf,
    /// Posteriorgram (.npy, N x T').
    #[arg(long)]
    pub ppg: PathBuf,
    /// Dataset manifest supplying the phoneme vocabulary.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiscretizeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub input: MapInput,
    #[command(flatten)]
    pub pdsm: PdsmArgs,
    /// Number of phoneme segments to keep.
    #[arg(long)]
    pub k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub model: PathBuf,
    /// Spectrogram (.npy, F x T).
    #[arg(long)]
    #[serde(skip)]
    pub input: PathBuf,
    /// Mask (.npy, F x T) with entries in [0, 1].
    #[arg(long)]
    #[serde(skip)]
    pub mask: PathBuf,
    /// Treat the mask as a raw saliency map: abs and min-max normalize first.
    #[arg(long)]
    pub continuous: bool,
    #[arg(long, default_value_t = 1)]
    pub target_class: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub model: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    /// Directory written by `attribute`.
    #[arg(long)]
    #[serde(skip)]
    pub maps: PathBuf,
    #[command(flatten)]
    pub pdsm: PdsmArgs,
    #[arg(long, default_value_t = 0)]
    pub k_min: usize,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Random-phoneme baseline repetitions per sample.
    #[arg(long, default_value_t = 5)]
    pub random_seeds: usize,
    #[command(flatten)]
    pub filter: SampleFilter,
}

#[derive(Debug, Args, Serialize)]
pub struct ImportanceArgs {
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub maps: PathBuf,
    #[arg(long)]
    pub method: String,
    #[command(flatten)]
    pub pdsm: PdsmArgs,
    #[command(flatten)]
    pub filter: SampleFilter,
}

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub input: MapInput,
    #[command(flatten)]
    pub pdsm: PdsmArgs,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directory written by `sweep-k`.
    #[arg(long)]
    #[serde(skip)]
    pub sweep: PathBuf,
}

/// Parses `argv`, runs the command and maps the outcome to an exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("pdsm: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::validation(format!("thread pool: {e}")))?;
    }
    commands::dispatch(&cli)
}

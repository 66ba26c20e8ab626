//! `hlnet` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 training
//! divergence.

mod commands;
mod error;
mod manifest;
mod preview;
mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use error::{CliError, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "hlnet", version, about = "Bracketed raw restoration: data, training, evaluation and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic bracketed dataset.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint or a directory of predictions against ground truth.
    Eval(EvalArgs),
    /// Restore every scene of a dataset with a checkpoint.
    Infer(InferArgs),
    /// Train and evaluate several ablation variants and tabulate them.
    Ablate(AblateArgs),
    /// Split a stored tensor into high and low frequency maps.
    Decompose(DecomposeArgs),
    /// Run the fast invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// key=value config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bracket frame size, `N` or `HxW`.
    #[arg(long)]
    pub size: Option<String>,
    /// Raw channels per frame.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Comma-separated exposure ratios, first must be 1.
    #[arg(long)]
    pub ratios: Option<String>,
    /// Expected frame count; must match the number of ratios.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Multiplier on the read and shot noise levels; 0 disables noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    /// Ground truth is this many times larger than the bracket.
    #[arg(long)]
    pub downscale: Option<usize>,
    #[arg(long)]
    pub saturation: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub width: Option<usize>,
    /// Ablation variant (full, no_sceb, no_hlfdb, ll, gg, wavelet).
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub pool_k: Option<usize>,
    #[arg(long)]
    pub n_scales: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub n_dense_layers: Option<usize>,
    /// identity or translation.
    #[arg(long)]
    pub alignment: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Total optimizer steps; overrides --epochs.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// constant or cosine.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, log and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to run on every scene.
    #[arg(long, conflicts_with = "pred")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `scene_<id>.hlt` prediction containers.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Tensor name read from prediction containers.
    #[arg(long, default_value = "output")]
    pub pred_record: String,
    /// Directory for `metrics.tsv` and the run manifest; the table is
    /// printed to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mu: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset for scoring; defaults to the training data.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated variants; all in-scope variants by default.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Container file holding the tensor.
    #[arg(long)]
    pub input: PathBuf,
    /// Name of a 2-D, 3-D or 4-D tensor in the container.
    #[arg(long)]
    pub tensor: String,
    #[arg(long, default_value_t = 2)]
    pub pool_k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Print max |f - (high + low_up)| and fail if it exceeds 1e-6.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Test hook: corrupt the wavelet transform so its check fails.
    #[arg(long, hide = true)]
    pub break_dwt: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Infer(a) => commands::infer::run(a),
        Command::Ablate(a) => commands::ablate::run(a),
        Command::Decompose(a) => commands::decompose::run(a),
        Command::Selftest(a) => commands::selftest::run(a),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

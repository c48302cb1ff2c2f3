//! The `mscgm` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const BANNER: &str = "note: networks are miniature desk-scale models; absolute quality is not comparable with full-capacity training";

#[derive(Debug, Parser)]
#[command(name = "mscgm", version, about = "Multi-scale conditional generation: wavelet subband analysis, bridge diffusion plus subband GAN training and sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-scale subband statistics of an image corpus.
    Analyze(AnalyzeArgs),
    /// Train the bridge noise predictor on the coarsest LL band.
    TrainBbdp(TrainArgs),
    /// Train the per-scale subband generators and critics.
    TrainGan(TrainArgs),
    /// Restore one image with trained checkpoints.
    Sample(SampleArgs),
    /// PSNR/SSIM of predicted images against references, paired by filename.
    Metrics(MetricsArgs),
    /// Run the built-in invariant suites.
    Verify(VerifyArgs),
    /// Finite-difference gradient checks of every layer kind.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SyntheticCorpus {
    WhiteNoise,
    PowerLaw,
    Spike,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Manifest whose target images form the corpus.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Generate the corpus instead of reading one.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticCorpus>,
    /// Synthetic corpus size.
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Synthetic image extent.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 4, value_parser = positive)]
    pub levels: usize,
    /// Comma-separated sparsity thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
    pub thresholds: Vec<f64>,
    /// Square patch extent; whole images when absent.
    #[arg(long, value_parser = positive)]
    pub patch: Option<usize>,
    #[arg(long, default_value_t = 1, value_parser = positive)]
    pub patches_per_image: usize,
    #[arg(long, default_value_t = 64, value_parser = positive)]
    pub kl_bins: usize,
    /// Count `x <= t` rather than `|x| <= t`.
    #[arg(long)]
    pub signed_sparsity: bool,
    /// Also report the condition number of the patch covariance, using
    /// square patches of this extent.
    #[arg(long, value_parser = positive)]
    pub kappa_patch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Train on this many pairs of the built-in 32×32 blur task.
    #[arg(long, value_parser = positive)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = positive)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    /// Optimizer steps (bbdp) or epochs (gan).
    #[arg(long, value_parser = positive)]
    pub iterations: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    /// Degradation chain applied to the targets, e.g. `blur:1.5,noise:0.05`.
    #[arg(long)]
    pub degrade: Option<String>,
    /// Final checkpoint path. Periodic ones go next to it as `<stem>.step<N>.<ext>`.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log CSV; defaults to `<out>` with extension `loss.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub bbdp: PathBuf,
    #[arg(long)]
    pub gan: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Reverse steps of the bridge sampler.
    #[arg(long, default_value_t = 100, value_parser = positive)]
    pub steps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restored image, written as 16-bit PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-stage timing and pixel-count CSV; defaults to `<out>` with extension `csv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Score the paired files even when some have no partner.
    #[arg(long)]
    pub allow_partial: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all")]
    pub suite: verify::Suite,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV report destination.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Layer kind name, `builders`, or `all`.
    #[arg(long, default_value = "all")]
    pub layer: String,
    #[arg(long, default_value_t = 20, value_parser = positive)]
    pub trials: usize,
    #[arg(long, default_value_t = mscgm_nn::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

/// Worker cap from `MSCGM_THREADS`; unset means the machine's parallelism.
pub fn thread_cap(var: Option<&str>) -> Result<usize, String> {
    match var {
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("MSCGM_THREADS must be a positive integer, got '{s}'")),
        },
    }
}

/// Prints the seed in effect and returns it.
pub(crate) fn resolve_seed(seed: Option<u64>) -> u64 {
    let s = seed.unwrap_or(0);
    println!("seed: {s}{}", if seed.is_none() { " (default)" } else { "" });
    s
}

/// `dir/stem.suffix` for a path `dir/stem.ext`.
pub(crate) fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub(crate) fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let cap = match thread_cap(std::env::var("MSCGM_THREADS").ok().as_deref()) {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(&a),
        Command::TrainBbdp(a) => {
            println!("{BANNER}\nworkers: 1 (cap {cap})");
            commands::train(&a, commands::Trainer::Bbdp)
        }
        Command::TrainGan(a) => {
            println!("{BANNER}\nworkers: 1 (cap {cap})");
            commands::train(&a, commands::Trainer::Gan)
        }
        Command::Sample(a) => {
            println!("{BANNER}\nworkers: 1 (cap {cap})");
            commands::sample(&a)
        }
        Command::Metrics(a) => commands::metrics(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_cap_validation() {
        assert_eq!(thread_cap(Some("3")), Ok(3));
        assert!(thread_cap(Some("0")).is_err());
        assert!(thread_cap(Some("many")).is_err());
        assert!(thread_cap(None).unwrap() >= 1);
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("runs/m.ckpt"), "step10.ckpt"), PathBuf::from("runs/m.step10.ckpt"));
        assert_eq!(sibling(Path::new("out.png"), "csv"), PathBuf::from("out.csv"));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["mscgm", "analyze", "--levels", "0", "--synthetic", "white-noise", "--out", "x.csv"]), EXIT_USAGE);
        assert_eq!(run(["mscgm", "verify", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["mscgm", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["mscgm", "verify", "--suite", "nope"]), EXIT_USAGE);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}

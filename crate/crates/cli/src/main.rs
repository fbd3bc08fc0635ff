//! `reshift`: batch front end for pitch shifting, pair generation, training,
//! restoration, evaluation and feature extraction.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use reshift_core::dataset::PairsConfig;
use reshift_core::diffusion::TrainConfig;
use reshift_core::Error;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "reshift", version, about = "Singing-voice pitch shifting by restoration")]
#[command(after_help = "Log level comes from RESHIFT_LOG (error, warn, info, debug, trace; default warn).")]
pub struct Cli {
    /// JSON run configuration; flags given on the command line win over it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Run seed, shared by every random stage
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads [default: logical cores]
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Write the JSON report here instead of stdout
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    World,
    Psola,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pitch-shift a WAV file with the vocoder or PSOLA
    Shift(ShiftArgs),
    /// Build artifact/clean training pairs from a folder of WAV files
    Pairs(PairsArgs),
    /// Train the mel denoiser on a pairs directory
    Train(TrainArgs),
    /// Restore a WAV file or log-mel tensor with a trained checkpoint
    Restore(RestoreArgs),
    /// Score estimate WAVs against reference WAVs paired by file stem
    Eval(EvalArgs),
    /// Extract log-mel, F0 and volume tensors from a WAV file
    Features(FeaturesArgs),
}

#[derive(Debug, clap::Args)]
pub struct ShiftArgs {
    /// Input WAV
    pub input: PathBuf,
    /// Output WAV
    pub output: PathBuf,
    /// Shift in semitones, within [-12, 12]
    #[arg(long, allow_negative_numbers = true)]
    pub semitones: f64,
    /// Shifter to use
    #[arg(long, value_enum, default_value_t = Method::World)]
    pub method: Method,
}

#[derive(Debug, clap::Args)]
pub struct PairsArgs {
    /// Folder of clean WAV files
    pub corpus: PathBuf,
    /// Output folder for tensors and manifest.json
    pub out_dir: PathBuf,
    /// Random shifts drawn per input file
    #[arg(long, default_value_t = PairsConfig::default().per_file_shifts)]
    pub shifts_per_file: usize,
    /// Smallest absolute shift in semitones
    #[arg(long, default_value_t = PairsConfig::default().min_abs_shift)]
    pub min_shift: f64,
    /// Largest absolute shift in semitones
    #[arg(long, default_value_t = PairsConfig::default().max_abs_shift)]
    pub max_shift: f64,
    /// Fraction of records held out for validation
    #[arg(long, default_value_t = PairsConfig::default().validation_ratio)]
    pub validation_ratio: f64,
    /// Cut inputs into blocks of this many mel frames [default: whole files]
    #[arg(long, value_name = "FRAMES")]
    pub segment_frames: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Pairs folder containing manifest.json
    pub data: PathBuf,
    /// Checkpoint folder to write
    pub checkpoint: PathBuf,
    /// Total optimisation steps, counted from the start of training
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    pub steps: u64,
    /// Adam learning rate
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    /// Crops per optimisation step
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    /// Frames per training crop
    #[arg(long, default_value_t = TrainConfig::default().block_frames)]
    pub block_frames: usize,
    /// Shallow start step stored for inference
    #[arg(long, default_value_t = TrainConfig::default().depth)]
    pub depth: usize,
    /// Largest diffusion step drawn in training [0 = all]
    #[arg(long, default_value_t = TrainConfig::default().max_step)]
    pub max_step: usize,
    /// Weight of the mel reconstruction term
    #[arg(long, default_value_t = TrainConfig::default().lambda_mel)]
    pub lambda_mel: f64,
    /// Weight of the F0 term
    #[arg(long, default_value_t = TrainConfig::default().lambda_f0)]
    pub lambda_f0: f64,
    /// Hidden channels of the denoiser
    #[arg(long, default_value_t = TrainConfig::default().channels)]
    pub channels: usize,
    /// Residual layers of the denoiser
    #[arg(long, default_value_t = TrainConfig::default().layers)]
    pub layers: usize,
    /// Steps between validation passes
    #[arg(long, default_value_t = TrainConfig::default().validate_every)]
    pub validate_every: u64,
    /// Continue from this checkpoint folder
    #[arg(long, value_name = "DIR")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct RestoreArgs {
    /// Input WAV, or a log-mel PSRT (then --f0 and --volume are required)
    pub input: PathBuf,
    /// Checkpoint folder
    pub checkpoint: PathBuf,
    /// Output WAV; the restored log-mel goes next to it as .psrt
    pub output: PathBuf,
    /// Shallow start step [default: from the checkpoint]
    #[arg(long)]
    pub depth: Option<usize>,
    /// DDIM stride [default: from the checkpoint]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Frame-level F0 in Hz (PSRT, 0 = unvoiced)
    #[arg(long, value_name = "PSRT")]
    pub f0: Option<PathBuf>,
    /// Frame-level RMS volume (PSRT)
    #[arg(long, value_name = "PSRT")]
    pub volume: Option<PathBuf>,
    /// Content embeddings (PSRT) [default: <input stem>.content.psrt if present]
    #[arg(long, value_name = "PSRT")]
    pub content: Option<PathBuf>,
    /// Griffin-Lim iterations for rendering
    #[arg(long, default_value_t = config::RestoreConfig::default().griffin_lim_iters)]
    pub gl_iters: usize,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Folder of reference WAVs
    pub ref_dir: PathBuf,
    /// Folder of estimate WAVs
    pub est_dir: PathBuf,
    /// Reference embeddings, one clip per row (PSRT), for MMD and KID
    #[arg(long, value_name = "PSRT", requires = "est_embeddings")]
    pub ref_embeddings: Option<PathBuf>,
    /// Estimate embeddings, one clip per row (PSRT)
    #[arg(long, value_name = "PSRT", requires = "ref_embeddings")]
    pub est_embeddings: Option<PathBuf>,
    /// RBF bandwidth for MMD [default: median pairwise distance]
    #[arg(long)]
    pub mmd_sigma: Option<f64>,
    /// Clips per KID subset, capped at the smaller set
    #[arg(long, default_value_t = config::EvalSection::default().kid_subset_size)]
    pub kid_subset_size: usize,
    /// Number of KID subsets
    #[arg(long, default_value_t = config::EvalSection::default().kid_subsets)]
    pub kid_subsets: usize,
}

#[derive(Debug, clap::Args)]
pub struct FeaturesArgs {
    /// Input WAV
    pub input: PathBuf,
    /// Output folder for <stem>.mel.psrt, <stem>.f0.psrt and <stem>.vol.psrt
    pub out_dir: PathBuf,
}

/// Failure with the process exit status it maps to.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        use std::io::ErrorKind;
        let msg = e.to_string();
        match &e {
            Error::NonFinite { .. } => CliError::Internal(msg),
            Error::Io { source, .. } => match source.kind() {
                ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::NotADirectory => CliError::Usage(msg),
                _ => CliError::Internal(msg),
            },
            _ => CliError::Usage(msg),
        }
    }
}

/// True when `id` was typed on the command line rather than defaulted.
pub fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("RESHIFT_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn init_threads(jobs: Option<usize>) -> Result<(), CliError> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        log::warn!("built without the parallel feature; running on one thread");
    }
    Ok(())
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    // The global flag is visible from the subcommand matches as well.
    let sub = matches.subcommand().map(|(_, m)| m).unwrap_or(matches);
    let seed = if explicit(sub, "seed") || explicit(matches, "seed") || cli.config.is_none() {
        cli.seed
    } else {
        cfg.seed
    };
    cfg.apply_seed(seed);
    init_threads(cli.jobs)?;
    let report = match &cli.command {
        Command::Shift(a) => commands::shift(a, &cfg)?,
        Command::Pairs(a) => commands::pairs(a, sub, &mut cfg)?,
        Command::Train(a) => commands::train(a, sub, &mut cfg)?,
        Command::Restore(a) => commands::restore(a, sub, &mut cfg)?,
        Command::Eval(a) => commands::eval(a, sub, &mut cfg)?,
        Command::Features(a) => commands::features(a, &cfg)?,
    };
    commands::emit(&report, cli.out.as_deref())
}

fn main() -> ExitCode {
    init_logging();
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli, &matches)));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
        Err(_) => ExitCode::from(1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_classes() {
        let nf = CliError::from(Error::NonFinite { step: 3 });
        assert_eq!(nf.code(), 1);
        assert!(nf.to_string().contains('3'));
        assert_eq!(CliError::from(Error::InvalidConfig("x".into())).code(), 2);
        assert_eq!(CliError::from(Error::EmptyCorpus("d".into())).code(), 2);
        let missing = Error::Io {
            path: "p".into(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        };
        assert_eq!(CliError::from(missing).code(), 2);
        let other = Error::Io {
            path: "p".into(),
            source: std::io::Error::other("disk"),
        };
        assert_eq!(CliError::from(other).code(), 1);
    }

    #[test]
    fn negative_semitones_parse() {
        let cli = Cli::try_parse_from(["reshift", "shift", "a.wav", "b.wav", "--semitones", "-7"]).unwrap();
        match cli.command {
            Command::Shift(a) => assert_eq!(a.semitones, -7.0),
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn explicit_detects_typed_flags() {
        let m = Cli::command().get_matches_from(["reshift", "train", "d", "c", "--steps", "5"]);
        let (_, sub) = m.subcommand().unwrap();
        assert!(explicit(sub, "steps"));
        assert!(!explicit(sub, "lr"));
    }
}

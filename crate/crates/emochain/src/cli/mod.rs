//! Batch command-line front end.
//!
//! [`run`] parses arguments, merges an optional JSON config file under the
//! explicit flags, runs one subcommand and maps the outcome to an exit code.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::chain::{ChainConfig, TrainOptions};
use crate::corpus::{Emotion, SplitCounts, SyntheticEmotionSpec, DEFAULT_MIN_CORRECT};
use crate::error::Error;
use crate::nn::DEFAULT_GRAD_TOL;
use crate::registration::{KernelMode, KernelSpec, RegistrationConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "emochain", version, about = "F0 registration and chained emotion conversion")]
pub struct Cli {
    /// Base seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for batch work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// JSON file of flag values; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic parallel emotion corpus.
    SynthCorpus(SynthArgs),
    /// Register every selected pair and write ground-truth momenta.
    GenMomenta(GenMomentaArgs),
    /// Register one source contour onto one target contour.
    Register(RegisterArgs),
    /// Train the chained model on a corpus with momenta.
    Train(TrainArgs),
    /// Convert one utterance with a trained checkpoint.
    Convert(ConvertArgs),
    /// Compare regularized and unregularized checkpoints on held-out pairs.
    EvalAblation(EvalAblationArgs),
    /// Finite-difference gradient check of every layer kind.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Neutral utterances to generate; each yields one pair per emotion.
    #[arg(long, default_value_t = 64)]
    pub pairs: usize,
    /// Target emotions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "angry")]
    pub emotions: Vec<Emotion>,
    #[arg(long, default_value_t = SyntheticEmotionSpec::default().min_frames)]
    pub min_frames: usize,
    #[arg(long, default_value_t = SyntheticEmotionSpec::default().max_frames)]
    pub max_frames: usize,
    #[arg(long, default_value_t = SyntheticEmotionSpec::default().speakers)]
    pub speakers: usize,
    /// Saliency filter: raters (of 10) who must recognise the emotion.
    #[arg(long, default_value_t = DEFAULT_MIN_CORRECT)]
    pub min_correct: u32,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Utterances whose pairs all move to the test split.
    #[arg(long, default_value_t = 0)]
    pub hold_out_utterances: usize,
}

/// Split sizes, applied to every emotion pair. All zero leaves the corpus
/// unsplit.
#[derive(Debug, Clone, Copy, Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    #[arg(long, default_value_t = 0)]
    pub test: usize,
}

impl SplitArgs {
    pub fn counts(&self) -> SplitCounts {
        SplitCounts::new(self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Kernel over frame indices only.
    #[value(alias = "time-only")]
    Time,
    /// Kernel over frame indices and F0 values.
    TimeValue,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct RegistrationArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Time)]
    pub mode: ModeArg,
    /// Kernel width over frames.
    #[arg(long, default_value_t = KernelSpec::default().sigma_t)]
    pub sigma_t: f64,
    /// Kernel width over F0 in Hz (time-value mode).
    #[arg(long, default_value_t = KernelSpec::default().sigma_q)]
    pub sigma_q: f64,
    #[arg(long, default_value_t = KernelSpec::default().jitter)]
    pub jitter: f64,
    /// Weight of the endpoint data term.
    #[arg(long, default_value_t = RegistrationConfig::default().lambda)]
    pub lambda: f64,
    /// Integration steps.
    #[arg(long, default_value_t = RegistrationConfig::default().steps)]
    pub steps: usize,
    #[arg(long, default_value_t = RegistrationConfig::default().max_iters)]
    pub max_iters: usize,
    #[arg(long, default_value_t = RegistrationConfig::default().grad_tol)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = RegistrationConfig::default().step_init)]
    pub step_init: f64,
}

impl RegistrationArgs {
    pub fn config(&self) -> RegistrationConfig {
        RegistrationConfig {
            kernel: KernelSpec {
                mode: match self.mode {
                    ModeArg::Time => KernelMode::TimeOnly,
                    ModeArg::TimeValue => KernelMode::TimeValue,
                },
                sigma_t: self.sigma_t,
                sigma_q: self.sigma_q,
                jitter: self.jitter,
            },
            lambda: self.lambda,
            steps: self.steps,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            step_init: self.step_init,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct GenMomentaArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Pairs to register.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    #[command(flatten)]
    pub registration: RegistrationArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RegisterArgs {
    /// Source F0 file (EMO1, one column).
    #[arg(long)]
    pub source: PathBuf,
    /// Target F0 file (EMO1, one column).
    #[arg(long)]
    pub target: PathBuf,
    #[command(flatten)]
    pub registration: RegistrationArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Full,
    Small,
    Tiny,
}

impl ArchArg {
    fn name(self) -> &'static str {
        match self {
            ArchArg::Full => "full",
            ArchArg::Small => "small",
            ArchArg::Tiny => "tiny",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Manifest with momenta for every training pair.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Emotion pair to train on, e.g. neutral-angry; needed when the
    /// manifest holds several.
    #[arg(long)]
    pub emotion_pair: Option<String>,
    #[arg(long, default_value_t = ChainConfig::default().lambda_e)]
    pub lambda_e: f64,
    #[arg(long, default_value_t = ChainConfig::default().lambda_d)]
    pub lambda_d: f64,
    #[arg(long, default_value_t = ChainConfig::default().lambda_p)]
    pub lambda_p: f64,
    #[arg(long, default_value_t = ChainConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = ChainConfig::default().max_steps)]
    pub max_steps: usize,
    #[arg(long, value_enum, default_value_t = ArchArg::Full)]
    pub arch: ArchArg,
    /// `false` switches the momenta term off (ablation).
    #[arg(long, default_value_t = ChainConfig::default().regularize_momenta, action = clap::ArgAction::Set)]
    pub regularize_momenta: bool,
    /// Window length in frames.
    #[arg(long, default_value_t = ChainConfig::default().context)]
    pub context: usize,
    #[arg(long, default_value_t = TrainOptions::default().validate_every)]
    pub validate_every: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Source F0 file (EMO1, one column).
    #[arg(long)]
    pub f0: PathBuf,
    /// Source MFCC file (EMO1).
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalAblationArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Regularized checkpoints as `[EMOTION_PAIR=]PATH`; a bare path serves
    /// every emotion pair. Several per pair are averaged per utterance.
    #[arg(long, value_delimiter = ',', required = true)]
    pub reg: Vec<String>,
    /// Unregularized checkpoints, same form as --reg.
    #[arg(long, value_delimiter = ',', required = true)]
    pub unreg: Vec<String>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Random instances per layer kind.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = DEFAULT_GRAD_TOL)]
    pub tol: f64,
}

/// Exit code of a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnsupportedMode(_) => EXIT_USAGE,
        Error::Io { .. }
        | Error::Format(_)
        | Error::Precondition(_)
        | Error::Shape(_)
        | Error::InputTooShort { .. }
        | Error::NumericInput(_)
        | Error::Data(_)
        | Error::Pairing(_)
        | Error::Count(_) => EXIT_DATA,
        Error::Divergence { .. }
        | Error::Conditioning(_)
        | Error::Stagnation(_)
        | Error::Numeric(_)
        | Error::Degenerate(_) => EXIT_NUMERIC,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. The one-line summary goes to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match commands::execute(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.partial {
                EXIT_PARTIAL
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn parse(argv: Vec<OsString>) -> Result<Cli, i32> {
    let report = |e: clap::Error| {
        let _ = e.print();
        if e.use_stderr() {
            EXIT_USAGE
        } else {
            EXIT_OK
        }
    };
    let matches = Cli::command().try_get_matches_from(&argv).map_err(report)?;
    let matches = match matches.get_one::<PathBuf>("config") {
        None => matches,
        Some(path) => {
            let merged = config::merge_config(&argv, &matches, path).map_err(|e| {
                eprintln!("error: {e}");
                exit_code(&e)
            })?;
            Cli::command().try_get_matches_from(&merged).map_err(report)?
        }
    };
    Cli::from_arg_matches(&matches).map_err(report)
}

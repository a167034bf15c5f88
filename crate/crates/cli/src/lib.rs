//! Command-line front end: argument definitions, configuration merging and
//! one handler per subcommand.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{RunConfig, TargetConfig};

/// Failure categories and their exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }

    /// `error[<category>]: <message>` on one line.
    pub fn line(&self) -> String {
        let (CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m)) = self;
        let flat: Vec<&str> = m.split_whitespace().collect();
        format!("error[{}]: {}", self.category(), flat.join(" "))
    }
}

impl From<neuroamp::Error> for CliError {
    fn from(e: neuroamp::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

/// Hearing-aid amplification toolkit: reference NAL-R + WDRC processing,
/// corpus construction, neural amplifier training, inference and evaluation.
#[derive(Debug, Parser)]
#[command(name = "neuroamp", version)]
pub struct Cli {
    /// JSON run configuration; flags given on the command line override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice made by the run
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for per-utterance work (default 1)
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Directory receiving resolved_config.json (default: the output directory)
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Print the NAL-R insertion gains of one or more audiograms as JSON
    Prescribe(PrescribeArgs),
    /// Process a WAV file with the reference NAL-R + WDRC amplifier
    Amplify(AmplifyArgs),
    /// Generate the synthetic speech/noise corpus and its manifest
    SynthCorpus(SynthArgs),
    /// Mix a clean and a noise WAV at a target SNR
    Mix(MixArgs),
    /// Pair corpus entries with audiograms and write reference targets
    BuildTargets(BuildTargetsArgs),
    /// Train a neural amplifier on a corpus with targets
    Train(TrainArgs),
    /// Run a trained amplifier on one WAV file or on a corpus split
    Infer(InferArgs),
    /// Score a system against the reference pipeline and compare score populations
    Eval(EvalArgs),
    /// Write band-energy tracks and realized-gain curves for plotting
    Analyze(AnalyzeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prescribe(_) => "prescribe",
            Command::Amplify(_) => "amplify",
            Command::SynthCorpus(_) => "synth-corpus",
            Command::Mix(_) => "mix",
            Command::BuildTargets(_) => "build-targets",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Analyze(_) => "analyze",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PrescribeArgs {
    /// Audiogram JSON (one object or an array of objects)
    #[arg(long, value_name = "FILE")]
    pub audiogram: PathBuf,
    /// Also write the JSON to this file
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AmplifyArgs {
    /// Input WAV (16 kHz mono)
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Audiogram JSON
    #[arg(long, value_name = "FILE")]
    pub audiogram: PathBuf,
    /// Audiogram id to use when the file holds several (default: the first)
    #[arg(long, value_name = "ID")]
    pub audiogram_id: Option<String>,
    /// Output WAV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Apply only the NAL-R insertion gain, without compression
    #[arg(long)]
    pub linear_only: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Corpus root to create
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of clean utterances
    #[arg(long, value_name = "N")]
    pub n_utts: Option<usize>,
    /// Utterances held out for validation (default n_utts/10)
    #[arg(long, value_name = "N")]
    pub n_val: Option<usize>,
    /// Utterances held out for testing (default n_utts/10)
    #[arg(long, value_name = "N")]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct MixArgs {
    /// Clean WAV
    #[arg(long, value_name = "FILE")]
    pub clean: PathBuf,
    /// Noise WAV (looped when shorter than the clean signal)
    #[arg(long, value_name = "FILE")]
    pub noise: PathBuf,
    /// Target SNR in dB
    #[arg(long, value_name = "DB", allow_negative_numbers = true)]
    pub snr_db: f64,
    /// Output WAV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    NeuroAmp,
    Denoising,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildTargetsArgs {
    /// Corpus root holding manifest.jsonl
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Audiogram bank JSON (default: generate one from the configured patterns)
    #[arg(long, value_name = "FILE")]
    pub audiograms: Option<PathBuf>,
    /// Input/target pairing
    #[arg(long, value_enum, value_name = "MODE")]
    pub mode: Option<ModeArg>,
    /// Audiograms paired with each utterance
    #[arg(long, value_name = "K")]
    pub per_utt: Option<usize>,
    /// Size of the generated audiogram bank
    #[arg(long, value_name = "N")]
    pub n_audiograms: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchArg {
    Cnn,
    Lstm,
    Crnn,
    Transformer,
}

impl From<ArchArg> for neuroamp::nn::Arch {
    fn from(a: ArchArg) -> Self {
        use neuroamp::nn::Arch;
        match a {
            ArchArg::Cnn => Arch::Cnn,
            ArchArg::Lstm => Arch::Lstm,
            ArchArg::Crnn => Arch::Crnn,
            ArchArg::Transformer => Arch::Transformer,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Corpus root with targets built
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    /// Run directory for model.namp, history.csv and resolved_config.json
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Core architecture (replaces the configured model with its desk-scale defaults)
    #[arg(long, value_enum, value_name = "ARCH")]
    pub arch: Option<ArchArg>,
    /// Use the large layer sizes instead of desk-scale ones
    #[arg(long)]
    pub paper_scale: bool,
    /// Maximum number of epochs
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long, value_name = "LR")]
    pub lr: Option<f64>,
    /// Examples per gradient step
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for neuroamp::dataset::Split {
    fn from(s: SplitArg) -> Self {
        use neuroamp::dataset::Split;
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    /// Trained checkpoint (model.namp)
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Input WAV (single-file mode)
    #[arg(long = "in", value_name = "FILE", requires = "audiogram", conflicts_with = "corpus")]
    pub input: Option<PathBuf>,
    /// Audiogram JSON (single-file mode)
    #[arg(long, value_name = "FILE")]
    pub audiogram: Option<PathBuf>,
    /// Audiogram id to use when the file holds several (default: the first)
    #[arg(long, value_name = "ID")]
    pub audiogram_id: Option<String>,
    /// Corpus root (batch mode: every entry of --split)
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Corpus split processed in batch mode
    #[arg(long, value_enum, default_value = "test", value_name = "SPLIT")]
    pub split: SplitArg,
    /// Output WAV (single-file mode) or directory of <utt>__<audiogram>.wav (batch mode)
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorArg {
    Input,
    Clean,
    Reference,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Reference pipeline outputs, matched to the test files by name
    #[arg(long, value_name = "DIR", conflicts_with = "corpus", required_unless_present = "corpus")]
    pub ref_dir: Option<PathBuf>,
    /// Signals both systems are scored against, matched by name (default: --ref-dir)
    #[arg(long, value_name = "DIR", requires = "ref_dir")]
    pub anchor_dir: Option<PathBuf>,
    /// Corpus root: references are its targets, test files are <utt>__<audiogram>.wav
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Corpus split evaluated
    #[arg(long, value_enum, default_value = "test", value_name = "SPLIT")]
    pub split: SplitArg,
    /// Corpus signal both systems are scored against
    #[arg(long, value_enum, default_value = "input", value_name = "SIGNAL")]
    pub anchor: AnchorArg,
    /// System outputs to evaluate
    #[arg(long, value_name = "DIR")]
    pub test_dir: PathBuf,
    /// Report directory (report.csv, summary.json)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Unprocessed input WAV
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Processed version of the input (e.g. a network output)
    #[arg(long, value_name = "FILE")]
    pub processed: Option<PathBuf>,
    /// Audiogram JSON; adds NAL-R and NAL-R + WDRC curves
    #[arg(long, value_name = "FILE")]
    pub audiogram: Option<PathBuf>,
    /// Audiogram id to use when the file holds several (default: the first)
    #[arg(long, value_name = "ID")]
    pub audiogram_id: Option<String>,
    /// Output directory (band_energy.csv, gains.csv)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Parse arguments, run the command, and map the outcome to an exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let err = CliError::Usage(first.to_string());
            eprintln!("{}", err.line());
            return err.exit_code();
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

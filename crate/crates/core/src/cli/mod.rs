//! `madsa` command line: synthesis, training, evaluation, terminal chat and
//! the HTTP service.

mod chat;
mod config;
mod pipeline;
pub mod serve;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::assessor::AssessorModel;
use crate::dialogue::DialogueModel;
use crate::error::Error;
use crate::synthesis::PhqBank;
use crate::system::InductiveSystem;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ENVIRONMENT: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Input(String),
    /// The machine, not the user's input, is at fault (port taken, runtime
    /// could not start).
    #[error("{0}")]
    Environment(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Environment(_) => EXIT_ENVIRONMENT,
            _ => EXIT_INPUT,
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "madsa", version, about = "Multi-aspect depression severity assessment through an inductive dialogue system")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root for corpora and checkpoints when no explicit path is given.
    #[arg(long, global = true, env = "MADSA_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a PHQ-annotated dialogue corpus and split it into train/dev.
    Synth(SynthArgs),
    /// Train the dialogue model or the assessor.
    Train(TrainArgs),
    /// Report per-aspect QWK, BLEU-1/2 and detection accuracy.
    Eval(EvalArgs),
    /// Talk to the system in the terminal.
    Chat(ChatArgs),
    /// Serve the JSON API (and optionally the chat UI bundle).
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of dialogues to generate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory (defaults to the data dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub phq_bank: Option<PathBuf>,
    /// Reuse a trained answer generator instead of training one.
    #[arg(long)]
    pub urg: Option<PathBuf>,
    #[arg(long)]
    pub urg_epochs: Option<usize>,
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    /// Never inject questionnaire exchanges.
    #[arg(long)]
    pub no_gate: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(subcommand)]
    pub model: TrainTarget,
}

#[derive(Debug, Subcommand)]
pub enum TrainTarget {
    Dialogue(TrainDialogueArgs),
    Assessor(TrainAssessorArgs),
}

#[derive(Debug, Args)]
pub struct Hyper {
    /// Training corpus (defaults to <data dir>/train.jsonl).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainDialogueArgs {
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub phq_bank: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainAssessorArgs {
    #[command(flatten)]
    pub hyper: Hyper,
    /// Dialogue checkpoint whose encoder is frozen and reused.
    #[arg(long)]
    pub dialogue: Option<PathBuf>,
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub lstm_units: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelPaths {
    #[arg(long)]
    pub dialogue: Option<PathBuf>,
    #[arg(long)]
    pub assessor: Option<PathBuf>,
    #[arg(long)]
    pub phq_bank: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub models: ModelPaths,
    /// Labelled corpus to score (defaults to <data dir>/dev.jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Print JSON instead of tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[command(flatten)]
    pub models: ModelPaths,
    /// Where the transcript is written on exit.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// JSON file of gate overrides, for rigged demonstrations and tests.
    #[arg(long, hide = true)]
    pub gate_hook: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub models: ModelPaths,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory with the built chat UI.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Closed sessions are written here as JSONL transcripts.
    #[arg(long)]
    pub sessions_dir: Option<PathBuf>,
}

/// Shared state derived from the global flags.
pub(crate) struct Context {
    pub config: RunConfig,
    pub data_dir: PathBuf,
}

impl Context {
    fn from_cli(cli: &Cli) -> CliResult<Self> {
        let mut config = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let seed = cli.seed.unwrap_or(config.seed);
        config.set_seed(seed);
        let data_dir = cli
            .data_dir
            .clone()
            .or_else(|| config.data_dir.clone())
            .unwrap_or_else(|| PathBuf::from("data"));
        Ok(Context { config, data_dir })
    }

    pub fn data_path(&self, explicit: Option<&PathBuf>, name: &str) -> PathBuf {
        explicit.cloned().unwrap_or_else(|| self.data_dir.join(name))
    }

    /// The bank at `explicit` or the configured path, else the bundled one.
    pub fn bank(&self, explicit: Option<&PathBuf>) -> CliResult<PhqBank> {
        match explicit.or(self.config.phq_bank.as_ref()) {
            Some(path) => Ok(PhqBank::load(path)?),
            None => Ok(PhqBank::standard()),
        }
    }

    pub fn system(&self, paths: &ModelPaths) -> CliResult<InductiveSystem> {
        let dialogue_path = self.data_path(paths.dialogue.as_ref(), "dialogue.ckpt");
        let assessor_path = self.data_path(paths.assessor.as_ref(), "assessor.ckpt");
        require(&dialogue_path, "dialogue checkpoint")?;
        require(&assessor_path, "assessor checkpoint")?;
        let dialogue = DialogueModel::load(&dialogue_path, &self.config.dialogue)?;
        let assessor = AssessorModel::load(&assessor_path, self.config.assessor.dropout)?;
        Ok(InductiveSystem::new(dialogue, assessor, self.bank(paths.phq_bank.as_ref())?)?)
    }
}

pub(crate) fn require(path: &Path, what: &str) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} not found: {}", path.display())))
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Synth(args) => pipeline::synth(ctx, args),
        Command::Train(args) => match &args.model {
            TrainTarget::Dialogue(a) => pipeline::train_dialogue(ctx, a),
            TrainTarget::Assessor(a) => pipeline::train_assessor(ctx, a),
        },
        Command::Eval(args) => pipeline::eval(ctx, args),
        Command::Chat(args) => chat::chat(ctx, args),
        Command::Serve(args) => serve::serve(ctx, args),
    }
}

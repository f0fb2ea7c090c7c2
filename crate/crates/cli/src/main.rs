//! `nlg`: synthesize a corpus, train, extract Neuralograms, run probes and
//! render matrices.
//!
//! Exit status is 0 on success, 1 on usage errors and 2 on data or model
//! errors. `NLG_THREADS` caps the worker pool (0 or unset = all cores).

mod commands;
mod runlog;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "nlg", version, about = "Neuralogram pipeline: corpus, training, extraction, probes")]
struct Cli {
    /// JSON-lines run log. Defaults to `run.jsonl` next to the command's output.
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    /// Do not write a run log.
    #[arg(long, global = true)]
    no_log: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled corpus as WAV files plus manifest.csv.
    Synth(SynthArgs),
    /// Train the desk classifier and write a checkpoint.
    Train(TrainArgs),
    /// Per-class ROC AUC of a checkpoint on a held-out corpus.
    Eval(EvalArgs),
    /// Compute the Neuralogram of a WAV file.
    Extract(ExtractArgs),
    /// Down/up chirp probe (frequency tracking).
    ProbeChirp(ChirpArgs),
    /// Accelerating impulse-train probe (rhythm cutoff).
    ProbeRhythm(RhythmArgs),
    /// Train one model per embedding size and compare AUC and chirp tracking.
    StudyEmbedding(StudyArgs),
    /// Render a Neuralogram, matrix CSV or WAV spectrogram as a PGM image.
    Render(RenderArgs),
    /// Compare backprop against central differences.
    Gradcheck(GradcheckArgs),
}

/// Corpus description: a JSON file, individual flags, or both (flags win).
#[derive(Args, Clone, Default)]
pub struct CorpusArgs {
    /// Corpus spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub n_clips: Option<usize>,
    #[arg(long)]
    pub clip_dur: Option<f64>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub max_active: Option<usize>,
    #[arg(long)]
    pub corpus_seed: Option<u64>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Train on an exported corpus directory instead of generating one.
    #[arg(long, conflicts_with = "spec")]
    pub data: Option<PathBuf>,
    /// Training config JSON (`lr`, `batch`, `steps`, `seed`, `embedding`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Embedding (dense layer) size.
    #[arg(long)]
    pub embedding: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Held-out corpus. Without a spec or `--data`, the checkpoint's classes
    /// are used with 500 clips and the training corpus seed + 1.
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, conflicts_with = "spec")]
    pub data: Option<PathBuf>,
    /// Report JSON (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub hop: f64,
    /// Window length; defaults to the model's input duration.
    #[arg(long)]
    pub window: Option<f64>,
    /// Layer index; defaults to the checkpoint's embedding layer.
    #[arg(long)]
    pub layer: Option<usize>,
    /// `.csv` writes CSV, anything else the binary matrix format.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ChirpArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Probe config JSON (`f_hi`, `f_lo`, `dur`, `hop_s`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub f_hi: Option<f64>,
    #[arg(long)]
    pub f_lo: Option<f64>,
    #[arg(long)]
    pub dur: Option<f64>,
    #[arg(long)]
    pub hop: Option<f64>,
    /// Report JSON; the sorted Neuralogram image goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RhythmArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Probe config JSON (`p0`, `p1`, `dur`, `alt_p0`, `hop_s`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub p0: Option<f64>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub dur: Option<f64>,
    /// Start period of the comparison run.
    #[arg(long)]
    pub alt_p0: Option<f64>,
    #[arg(long)]
    pub hop: Option<f64>,
    /// Report JSON; the energy curves CSV goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct StudyArgs {
    /// Comma-separated embedding sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [2000usize, 500])]
    pub sizes: Vec<usize>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out clips (seed = corpus seed + 1).
    #[arg(long, default_value_t = 500)]
    pub heldout: usize,
    /// Chirp probe length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub chirp_dur: f64,
    /// Output directory (table and checkpoints).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum ScaleArg {
    Linear,
    Log,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum NormalizeArg {
    Global,
    PerRow,
}

#[derive(Args)]
pub struct RenderArgs {
    /// Neuralogram (CSV or binary) or WAV (rendered as its power spectrogram).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = -80.0, allow_hyphen_values = true)]
    pub floor_db: f64,
    #[arg(long, value_enum, default_value = "global")]
    pub normalize: NormalizeArg,
    /// Sort rows by peak time before rendering.
    #[arg(long)]
    pub sort: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum ArchArg {
    Desk,
    Deep19,
    Toy,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub arch: ArchArg,
    /// Channel divisor for `deep19`.
    #[arg(long, default_value_t = 16)]
    pub divisor: usize,
    #[arg(long, default_value_t = 500)]
    pub embedding: usize,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Report JSON (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A bad invocation, as opposed to bad data; maps to exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("NLG_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| usage(format!("NLG_THREADS must be a count, got `{v}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|()| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

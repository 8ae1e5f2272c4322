use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

mod commands;
mod overrides;

/// Counterfactual data construction, two-stage training and evaluation for
/// synthetic video question answering.
///
/// Commands that take a training configuration accept `--config FILE` plus
/// any configuration key as `--key value`. Nested keys use dots
/// (`--weights.alpha 0.5`); keys under `paths`, `weights` and `model` may
/// also be given bare (`--dataset DIR`, `--alpha 0.5`, `--d 32`).
#[derive(Parser)]
#[command(name = "cfcon", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Write one counterfactual question triple per input question.
    AugmentText(AugmentTextArgs),
    /// Write the positive and negative video of one frame grid.
    AugmentVideo(AugmentVideoArgs),
    /// Run stage 1 or stage 2 training.
    Train(ConfigArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of the full training objective.
    Gradcheck(GradcheckArgs),
    /// Similarity margins of a checkpoint on its counterfactual pairs.
    Audit(AuditArgs),
    /// Stage-2 runs for every text and video variant pairing.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// World description (JSON); defaults to the built-in world.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    num_qa: Option<usize>,
    #[arg(long)]
    qa_per_episode: Option<usize>,
    #[arg(long)]
    min_events: Option<usize>,
    #[arg(long)]
    max_events: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AugmentTextArgs {
    /// Question JSONL: dataset records or `{"question": ..}` lines.
    #[arg(long = "in")]
    input: PathBuf,
    /// f_q1, f_q2 or f_q3.
    #[arg(long, default_value = "f_q3")]
    variant: String,
    /// World description supplying the event vocabulary.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    swap_table: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentVideoArgs {
    /// Tensor file holding N x C x H x W frame grids.
    #[arg(long = "in", required_unless_present = "dataset", conflicts_with = "dataset")]
    input: Option<PathBuf>,
    /// Dataset directory to take the video from.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Tensor name in `--in`; needed when the file holds several.
    #[arg(long)]
    tensor: Option<String>,
    /// Video id for dataset lookup and bounding boxes.
    #[arg(long)]
    video_id: Option<String>,
    /// f_v1, f_v2, f_v3 or f_v4.
    #[arg(long, default_value = "f_v1")]
    variant: String,
    /// Bounding-box JSONL, for f_v4.
    #[arg(long)]
    bboxes: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    fill: f64,
    /// Output tensor file with `positive` and `negative` entries.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Training configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of samples in the checked batch.
    #[arg(long, default_value_t = 3)]
    samples: usize,
    /// Coordinates probed per parameter tensor; 0 probes all of them.
    #[arg(long, default_value_t = 24)]
    coords: usize,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for per-run metrics, checkpoints and the comparison table.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    stage2_epochs: usize,
}

/// A command-line mistake; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const CONFIGURABLE: &[&str] = &["train", "gradcheck", "audit", "ablate"];

fn usage_exit(msg: &str) -> ! {
    Cli::command().error(ErrorKind::UnknownArgument, msg).exit()
}

/// Separate configuration overrides from the flags the subcommand declares.
fn split_argv(argv: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let Some(sub) = argv.get(1).filter(|s| CONFIGURABLE.contains(&s.as_str())) else {
        return (argv, Vec::new());
    };
    let cmd = Cli::command();
    let sc = cmd.find_subcommand(sub).expect("listed subcommands exist");
    let mut known = BTreeSet::from(["help".to_string()]);
    let mut takes_value = BTreeSet::new();
    for a in sc.get_arguments() {
        if let Some(long) = a.get_long() {
            known.insert(long.to_string());
            if a.get_action().takes_values() {
                takes_value.insert(long.to_string());
            }
        }
    }
    let (rest, raw) = overrides::split(&argv[2..], &known, &takes_value).unwrap_or_else(|m| usage_exit(&m));
    let resolved = raw
        .into_iter()
        .map(|(k, v)| Ok((overrides::resolve(&k)?, v)))
        .collect::<Result<Vec<_>, String>>()
        .unwrap_or_else(|m| usage_exit(&m));
    let mut kept = argv[..2].to_vec();
    kept.extend(rest);
    (kept, resolved)
}

fn main() -> ExitCode {
    let (argv, sets) = split_argv(std::env::args().collect());
    let cli = Cli::parse_from(argv);
    match commands::run(cli.command, &sets) {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => usage_exit(&e.to_string()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

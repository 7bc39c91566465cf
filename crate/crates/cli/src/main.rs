//! `sdl-lab`: command-line harness for the score distillation laboratory.

mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sdl_lab::LabError;

#[derive(Debug)]
pub enum CliError {
    /// Rejected input; nothing was computed.
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "sdl-lab", version, about = "Score distillation laboratory (SDS / VSD / TSD)")]
pub struct Cli {
    /// Overrides the seed in the loaded config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// JSON config for the subcommand (schemas under docs/).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; SDL_LAB_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a Gaussian-mixture teacher and its base prompt.
    MakeTeacher(MakeTeacherArgs),
    /// Sample references and invert one block of HiPer tokens per particle.
    Invert(InvertArgs),
    /// Run SDS, VSD or TSD and write a run directory.
    Distill(DistillArgs),
    /// Score one checkpoint and write a report and contact sheet.
    Evaluate(EvaluateArgs),
    /// Midpoint-convexity probes of the SDS potential or a radiance field.
    Probe(ProbeArgs),
    /// SDS / VSD / TSD over several seeds on the standard 4-mode teacher.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct MakeTeacherArgs {
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    /// Per-component standard deviation.
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub anchor_scale: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub border: Option<usize>,
    /// Require an exact classifier (rejects zero spread).
    #[arg(long)]
    pub classify: bool,
}

#[derive(Args, Debug)]
pub struct InvertArgs {
    /// Defaults to `<out>/teacher.json`.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Defaults to `<out>/prompt.json`.
    #[arg(long)]
    pub prompt: Option<PathBuf>,
    #[arg(long)]
    pub particles: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Sds,
    Vsd,
    Tsd,
}

impl From<MethodArg> for sdl_lab::distill::Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sds => Self::Sds,
            MethodArg::Vsd => Self::Vsd,
            MethodArg::Tsd => Self::Tsd,
        }
    }
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    /// Replaces the method (with its canonical augmentation and adapter).
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub skip_renders: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    /// 120 evaluation views.
    Paper,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExtractorArg {
    LogPosterior,
    CenteredPixels,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// `<run>/checkpoints/iter_<n>`; defaults to the latest under `<out>`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "preset")]
    pub views: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorArg>,
    #[arg(long)]
    pub no_cosine: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbeKind {
    /// Convexity of the SDS potential.
    Lemma1,
    /// Convexity of a grid+MLP field in its output heads.
    Lemma2,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[arg(value_enum)]
    pub kind: ProbeKind,
    /// Mixture teacher to probe instead of the built-in single- and two-mode pair.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub segments: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub iters: Option<usize>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub methods: Option<Vec<MethodArg>>,
    /// Also write PPM snapshots in every run directory.
    #[arg(long)]
    pub renders: bool,
}

fn setup_threads(flag: Option<usize>) -> Result<(), CliError> {
    let env = match std::env::var("SDL_LAB_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| CliError::Validation(format!("SDL_LAB_THREADS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = env.or(flag) {
        if n == 0 {
            return Err(CliError::Validation("thread count must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = setup_threads(cli.threads).and_then(|_| commands::dispatch(&cli));
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdl-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `cpstream`: generate tensors, fit CP models, and run streaming experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use cpstream::experiment::{run_stream_experiment_with, ExperimentConfig, ReportWriter, INCREMENTAL_ARM, RECOMPUTE_ARM};
use cpstream::io::{parse_coordinate_file, read_model_file, write_coordinate_file, write_model_file};
use cpstream::{cp_als, fms, generate, relative_error, relative_fitness, AlsConfig, IncrementalConfig, SparseTensor};

#[derive(Parser)]
#[command(name = "cpstream", version, about = "Incremental CP decomposition of tensors growing along their last mode")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic low-rank tensor and its generating model.
    Gen(GenArgs),
    /// Fit a CP model to a whole tensor.
    Decompose(DecomposeArgs),
    /// Replay a tensor as a stream of slice batches and report per-batch metrics as CSV.
    Stream(StreamArgs),
    /// Score a model against a tensor.
    Eval(EvalArgs),
}

#[derive(Args)]
struct AlsArgs {
    /// Number of components.
    #[arg(long, short = 'r')]
    rank: usize,
    /// Stop when the fit changes by less than this between sweeps.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl AlsArgs {
    fn config(&self) -> Result<AlsConfig> {
        if self.rank == 0 || self.max_iters == 0 || !(self.tolerance > 0.0) {
            bail!("--rank, --max-iters and --tolerance must be positive");
        }
        Ok(AlsConfig { rank: self.rank, tolerance: self.tolerance, max_iterations: self.max_iters, seed: self.seed })
    }
}

#[derive(Args)]
struct InputArgs {
    /// Tensor in coordinate format.
    #[arg(long, short = 'i')]
    input: PathBuf,
    /// Keep only the leading indices of each mode, e.g. `200,200,500`.
    #[arg(long, value_delimiter = ',')]
    caps: Option<Vec<usize>>,
}

impl InputArgs {
    fn load(&self) -> Result<SparseTensor> {
        let x = parse_coordinate_file(&self.input).with_context(|| format!("reading {}", self.input.display()))?;
        let x = match &self.caps {
            Some(caps) => x.leading(caps)?,
            None => x,
        };
        info!("loaded tensor {:?} with {} nonzeros", x.dims(), x.nnz());
        Ok(x)
    }
}

#[derive(Args)]
struct GenArgs {
    /// Mode sizes, e.g. `100,100,100`.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, short = 'r')]
    rank: usize,
    /// Fraction of entries kept.
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    /// Noise standard deviation relative to the RMS entry.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output tensor in coordinate format.
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Where to write the generating model.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    als: AlsArgs,
    /// Output model file.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StreamArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    als: AlsArgs,
    /// Sampling factor, one value for all modes or one per mode.
    #[arg(long = "sampling-factor", short = 's', value_delimiter = ',', default_value = "2")]
    sampling_factor: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    repetitions: usize,
    #[arg(long = "batch-size", default_value_t = 50)]
    batch_size: usize,
    #[arg(long = "initial-fraction", default_value_t = 0.1)]
    initial_fraction: f64,
    /// Estimate each batch's rank and handle rank-deficient batches.
    #[arg(long = "quality-control")]
    quality_control: bool,
    /// Trials per candidate rank when estimating a batch's rank.
    #[arg(long = "rank-trials", default_value_t = 3)]
    rank_trials: usize,
    /// Also refit the whole tensor after every batch.
    #[arg(long)]
    baseline: bool,
    /// Generating model, for factor match scores.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output CSV.
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Where to write the final incremental model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, short = 'm')]
    model: PathBuf,
    /// Reference model for relative fitness.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Generating model for the factor match score.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Decompose(a) => decompose(a),
        Command::Stream(a) => stream(a),
        Command::Eval(a) => eval(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let gt = generate(&a.dims, a.rank, a.density, a.noise, a.seed)?;
    write_coordinate_file(&a.out, &gt.tensor).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.truth_out {
        write_model_file(path, &gt.model).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("tensor {:?}, {} nonzeros", gt.tensor.dims(), gt.tensor.nnz());
    Ok(())
}

fn decompose(a: DecomposeArgs) -> Result<()> {
    let x = a.input.load()?;
    let model = cp_als(&x, &a.als.config()?)?;
    println!("relative_error {}", relative_error(&x, &model)?);
    if let Some(path) = &a.out {
        write_model_file(path, &model).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn stream(a: StreamArgs) -> Result<()> {
    let x = a.input.load()?;
    let sampling_factors = match a.sampling_factor.as_slice() {
        [s] => vec![*s; x.ndims()],
        list if list.len() == x.ndims() => list.to_vec(),
        list => bail!("{} sampling factors for a {}-mode tensor", list.len(), x.ndims()),
    };
    let truth = a.truth.as_ref().map(read_model_file).transpose().context("reading ground truth")?;
    let cfg = ExperimentConfig {
        incremental: IncrementalConfig {
            als: a.als.config()?,
            sampling_factors,
            repetitions: a.repetitions,
            quality_control: a.quality_control,
            rank_trials: a.rank_trials,
        },
        batch_size: a.batch_size,
        initial_fraction: a.initial_fraction,
        baseline: a.baseline,
    };
    let mut writer = ReportWriter::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcome = run_stream_experiment_with(&x, &cfg, truth.as_ref(), |r| writer.append(r))?;
    if !outcome.rejected_batches.is_empty() {
        eprintln!("rejected batches: {:?}", outcome.rejected_batches);
    }
    if let Some(path) = &a.model_out {
        write_model_file(path, &outcome.incremental).with_context(|| format!("writing {}", path.display()))?;
    }
    let total = |arm: &str| -> f64 {
        outcome.reports.iter().filter(|r| r.arm == arm).map(|r| r.wall_clock_seconds).sum()
    };
    println!(
        "{} batches; total seconds: incremental {:.3}, recompute {:.3}",
        outcome.reports.iter().filter(|r| r.arm == INCREMENTAL_ARM).count(),
        total(INCREMENTAL_ARM),
        total(RECOMPUTE_ARM)
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let x = a.input.load()?;
    let model = read_model_file(&a.model).context("reading model")?;
    println!("relative_error {}", relative_error(&x, &model)?);
    if let Some(path) = &a.baseline {
        let baseline = read_model_file(path).context("reading baseline")?;
        println!("relative_fitness {}", relative_fitness(&x, &model, &baseline)?);
    }
    if let Some(path) = &a.truth {
        let truth = read_model_file(path).context("reading ground truth")?;
        println!("fms {}", fms(&model, &truth)?);
    }
    Ok(())
}

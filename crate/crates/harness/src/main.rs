use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cyclicnet::nn::{count_arch_params, Network};
use cyclicnet::oracle::{check_model_equivariance, EquivarianceMode, EquivarianceReport};
use cyclicnet::tensor::dump;
use cyclicnet::{DType, GroupKind, Scalar, Tensor4};
use cyclicnet_harness::checkpoint::{self, Manifest};
use cyclicnet_harness::eval::{metrics_from_proba, predict_proba};
use cyclicnet_harness::train::{read_metrics, run_experiment};
use cyclicnet_harness::{data, Dataset, EvalMetrics, ExperimentConfig, HarnessError, Result, SyntheticTaskSpec};
use serde::Serialize;

/// Exit status for a completed check that did not pass.
const VERIFY_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "cyclicnet", version, about = "Train, evaluate and verify rotation-equivariant CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv and checkpoint/ under --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Loss and accuracy of a checkpoint on a gen-data directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Average the softmax over the four quarter turns of each input.
        #[arg(long)]
        tta: bool,
    },
    /// Check invariance or same-equivariance of a model under a group.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the model's slice group, or c4 without a slice.
        #[arg(long)]
        group: Option<GroupKind>,
        /// Defaults to same-equivariant for models with spatial output, invariant otherwise.
        #[arg(long)]
        mode: Option<EquivarianceMode>,
        /// Use trained weights instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to 1e-5 for f64 models and 1e-3 for f32.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Also parse and sanity-check a metrics.csv file.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Per-layer and total parameter counts as CSV.
    Params {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic dataset directory from a task spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a tensor dump as JSON.
    Dump { file: PathBuf },
    /// Compare two tensor dumps elementwise.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct RotationMetrics {
    turns: usize,
    #[serde(flatten)]
    metrics: EvalMetrics,
}

#[derive(Serialize)]
struct EvalReport {
    tta: bool,
    test: EvalMetrics,
    rotations: Vec<RotationMetrics>,
}

fn eval_typed<T: Scalar>(dir: &Path, data: &Dataset, tta: bool) -> Result<EvalReport> {
    let (_, net) = checkpoint::load::<T>(dir)?;
    let mut rotations = Vec::new();
    for (turns, split) in data.test_rotations.iter().enumerate() {
        let proba = predict_proba(&net, &split.images, tta)?;
        rotations.push(RotationMetrics { turns, metrics: metrics_from_proba(&proba, &split.labels)? });
    }
    Ok(EvalReport { tta, test: rotations[0].metrics, rotations })
}

#[derive(Serialize)]
struct VerifyReport {
    equivariance: EquivarianceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics_rows: Option<usize>,
}

struct VerifyArgs {
    group: GroupKind,
    mode: EquivarianceMode,
    trials: usize,
    seed: u64,
    tolerance: Option<f64>,
}

fn verify_typed<T: Scalar>(cfg: &ExperimentConfig, checkpoint: Option<&Path>, a: &VerifyArgs) -> Result<EquivarianceReport> {
    let net = match checkpoint {
        Some(dir) => {
            let (manifest, net) = checkpoint::load::<T>(dir)?;
            if manifest.model.layers != cfg.model.layers {
                return Err(HarnessError::Config("checkpoint was trained with a different layer stack".into()));
            }
            net
        }
        None => Network::<T>::init(cfg.architecture()?, cfg.train.seed),
    };
    let tolerance = a.tolerance.unwrap_or(if T::DTYPE == DType::F64 { 1e-5 } else { 1e-3 });
    Ok(check_model_equivariance(&net, a.group, a.mode, a.trials, a.seed, tolerance)?)
}

#[derive(Serialize)]
struct DumpOut {
    dims: cyclicnet::Dims,
    dtype: DType,
    data: Vec<f64>,
}

#[derive(Serialize)]
struct CompareOut {
    dims: cyclicnet::Dims,
    max_abs_diff: f64,
    tolerance: f64,
    passed: bool,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Ok(true) on success, Ok(false) when a check ran and failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&cfg, &out)?;
            eprintln!(
                "trained {} epochs, {} parameters, {} samples per step after slicing",
                summary.epochs, summary.params, summary.effective_batch
            );
            print_json(&summary)?;
        }
        Command::Eval { checkpoint, data, tta } => {
            let dataset = Dataset::load(&data)?;
            let report = match Manifest::read(&checkpoint)?.model.dtype {
                DType::F32 => eval_typed::<f32>(&checkpoint, &dataset, tta)?,
                DType::F64 => eval_typed::<f64>(&checkpoint, &dataset, tta)?,
            };
            print_json(&report)?;
        }
        Command::Verify { config, group, mode, checkpoint, trials, seed, tolerance, metrics } => {
            let cfg = ExperimentConfig::load(&config)?;
            let arch = cfg.architecture()?;
            let spatial = arch.output_shape().height > 1 || arch.output_shape().width > 1;
            let args = VerifyArgs {
                group: group.unwrap_or(if arch.has_slice() { arch.group() } else { GroupKind::C4 }),
                mode: mode.unwrap_or(if spatial { EquivarianceMode::SameEquivariant } else { EquivarianceMode::Invariant }),
                trials,
                seed,
                tolerance,
            };
            let equivariance = match cfg.model.dtype {
                DType::F32 => verify_typed::<f32>(&cfg, checkpoint.as_deref(), &args)?,
                DType::F64 => verify_typed::<f64>(&cfg, checkpoint.as_deref(), &args)?,
            };
            let metrics_rows = metrics.map(|p| read_metrics(&p)).transpose()?.map(|r| r.len());
            let passed = equivariance.passed;
            print_json(&VerifyReport { equivariance, metrics_rows })?;
            return Ok(passed);
        }
        Command::Params { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", count_arch_params(&cfg.architecture()?).to_csv());
        }
        Command::GenData { spec, out } => {
            let spec: SyntheticTaskSpec = read_json(&spec)?;
            data::generate(&spec)?.save(&out)?;
        }
        Command::Dump { file } => {
            let bytes = std::fs::read(&file)?;
            let (dims, dtype) = dump::header(&bytes)?;
            let t: Tensor4<f64> = dump::decode(&bytes)?;
            print_json(&DumpOut { dims, dtype, data: t.into_data() })?;
        }
        Command::Compare { a, b, tolerance } => {
            let (a, b) = (dump::read_file::<f64>(&a)?, dump::read_file::<f64>(&b)?);
            let max_abs_diff = a.max_abs_diff(&b)?;
            let passed = max_abs_diff <= tolerance;
            print_json(&CompareOut { dims: a.dims(), max_abs_diff, tolerance, passed })?;
            return Ok(passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(VERIFY_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

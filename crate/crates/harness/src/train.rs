//! Deterministic minibatch Adam training on a [`Dataset`].

use std::fs::File;
use std::path::Path;

use cyclicnet::nn::{adam_step, lr_schedule, softmax_cross_entropy, AdamState, Architecture, Network};
use cyclicnet::{DType, Error, Scalar, Tensor4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{DataSource, ExperimentConfig, TrainConfig};
use crate::data::{self, Dataset};
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, EvalMetrics};

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

pub struct TrainOutcome<T> {
    pub network: Network<T>,
    pub history: Vec<MetricsRow>,
}

/// Offset between the init seed and the shuffling/augmentation stream.
const DATA_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn augment<T: Scalar>(x: &Tensor4<T>, rng: &mut ChaCha8Rng) -> Result<Tensor4<T>> {
    let turned: Vec<Tensor4<T>> = (0..x.dims().n).map(|n| x.select_batch(&[n]).rotate90(rng.random_range(0..4))).collect();
    Ok(Tensor4::concat_batch(&turned)?)
}

/// Trains from a fresh initialization seeded by `cfg.seed`. Every finished
/// epoch produces a `train` row (running averages over the epoch's batches)
/// and a `val` row, passed to `sink` as soon as they exist.
pub fn train<T: Scalar>(
    arch: Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    mut sink: impl FnMut(&MetricsRow) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let mut net = Network::<T>::init(arch, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(DATA_STREAM));
    let images = data.train.images.cast::<T>();
    let sizes: Vec<usize> = net.buffers().iter().map(|b| b.dims().len()).collect();
    let mut adam = AdamState::new(cfg.adam, &sizes);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let lr = lr_schedule(epoch - 1, cfg.base_lr, &cfg.milestones);
        order.shuffle(&mut rng);
        let (mut total_loss, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = images.select_batch(batch);
            if cfg.augment {
                x = augment(&x, &mut rng)?;
            }
            let labels: Vec<usize> = batch.iter().map(|&i| data.train.labels[i]).collect();
            let (logits, tape) = net.forward_with_tape(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() || !logits.all_finite() {
                return Err(Error::Numerical(format!("non-finite loss {loss} at epoch {epoch}, batch {b}")).into());
            }
            total_loss += loss.as_f64() * batch.len() as f64;
            let k = logits.dims().c;
            correct += labels
                .iter()
                .enumerate()
                .filter(|&(n, &l)| {
                    let p = logits.sample(n);
                    (0..k).fold(0, |best, c| if p[c] > p[best] { c } else { best }) == l
                })
                .count();

            let (grads, _) = net.backward(&tape, &grad)?;
            let g: Vec<&[T]> = grads.buffers().into_iter().map(|t| t.data()).collect();
            let mut params = net.buffers_mut();
            let mut p: Vec<&mut [T]> = params.iter_mut().map(|t| t.data_mut()).collect();
            adam_step(&mut p, &g, &mut adam, lr)?;
        }
        if net.buffers().iter().any(|b| !b.all_finite()) {
            return Err(Error::Numerical(format!("parameters diverged during epoch {epoch}")).into());
        }
        let n = data.train.len() as f64;
        let train_row = MetricsRow { epoch, split: "train".into(), loss: total_loss / n, accuracy: correct as f64 / n };
        let val = evaluate(&net, &data.val.images, &data.val.labels, false)?;
        let val_row = MetricsRow { epoch, split: "val".into(), loss: val.loss, accuracy: val.accuracy };
        for row in [train_row, val_row] {
            sink(&row)?;
            history.push(row);
        }
    }
    Ok(TrainOutcome { network: net, history })
}

pub fn resolve_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(DataSource::Dir { dir }) => Dataset::load(dir),
        Some(DataSource::Synthetic(spec)) => data::generate(spec),
        None => Err(HarnessError::Config("training needs a \"data\" section".into())),
    }
}

/// Final metrics of a `train` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: usize,
    pub params: usize,
    pub effective_batch: usize,
    pub val: EvalMetrics,
    pub test: EvalMetrics,
}

/// `train --config --out`: writes `out/metrics.csv` (appended to after every
/// epoch, with a closing `test` row) and `out/checkpoint/`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let arch = cfg.architecture()?;
    let data = resolve_data(cfg)?;
    cfg.check_training(&arch, &data.spec)?;
    std::fs::create_dir_all(out)?;
    match cfg.model.dtype {
        DType::F32 => run_typed::<f32>(arch, &data, cfg, out),
        DType::F64 => run_typed::<f64>(arch, &data, cfg, out),
    }
}

fn run_typed<T: Scalar>(arch: Architecture, data: &Dataset, cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let effective_batch = cfg.train.batch_size * if arch.has_slice() { arch.group().order() } else { 1 };
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(File::create(out.join("metrics.csv"))?);
    writer.write_record(["epoch", "split", "loss", "accuracy"])?;
    writer.flush()?;
    let outcome = train::<T>(arch, data, &cfg.train, |row| {
        writer.serialize(row)?;
        writer.flush()?;
        Ok(())
    })?;
    let net = outcome.network;
    let val = evaluate(&net, &data.val.images, &data.val.labels, false)?;
    let test = evaluate(&net, &data.test.images, &data.test.labels, false)?;
    writer.serialize(MetricsRow { epoch: cfg.train.epochs, split: "test".into(), loss: test.loss, accuracy: test.accuracy })?;
    writer.flush()?;
    checkpoint::save(&net, &out.join("checkpoint"), cfg.train.epochs, cfg.train.seed)?;
    Ok(RunSummary { epochs: cfg.train.epochs, params: net.param_count(), effective_batch, val, test })
}

/// Reads a metrics file back, rejecting malformed or non-finite rows.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["epoch", "split", "loss", "accuracy"] {
        return Err(HarnessError::Config(format!("unexpected metrics header {header:?}")));
    }
    let rows: Vec<MetricsRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = rows.iter().find(|r| !(r.loss.is_finite() && (0.0..=1.0).contains(&r.accuracy))) {
        return Err(HarnessError::Config(format!("bad metrics row {bad:?}")));
    }
    Ok(rows)
}

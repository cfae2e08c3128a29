//! One training run per seed, evaluation, and size sweeps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use reynet::checkpoint::Checkpoint;
use reynet::data::{generate, load_dataset, Dataset, TaskKind};
use reynet::model::{Model, ModelSpec};
use reynet::train::{evaluate_mse, train};

use crate::config::{test_data_seed, train_data_seed, RunConfig};
use crate::metrics::MetricsRecord;

#[derive(Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub model: Model,
    pub records: Vec<MetricsRecord>,
    /// Final test MSE at each test size, in `RunConfig::test_sizes` order.
    pub test_mse: Vec<(usize, f64)>,
}

impl RunOutcome {
    /// Final test MSE at the training size.
    pub fn test_mse_at(&self, n: usize) -> Option<f64> {
        self.test_mse.iter().find(|(m, _)| *m == n).map(|&(_, v)| v)
    }
}

pub fn spec_for(cfg: &RunConfig) -> Result<ModelSpec> {
    let task = cfg.task_kind()?;
    let mut spec = ModelSpec::new(cfg.model_kind()?, cfg.n_train, 2, task.output_order(), cfg.widths.clone());
    if let Some(p) = cfg.pooling_kind()? {
        if spec.pooling.is_none() {
            return Err(crate::usage("pooling applies to invariant models only"));
        }
        spec.pooling = Some(p);
    }
    if spec.kind.is_invariant() {
        spec.body_channels = cfg.body_channels;
    }
    if cfg.restrict {
        match spec.reduced.as_mut() {
            Some(r) => {
                let order = r.order();
                let m = if spec.kind.is_invariant() { order } else { spec.out_order };
                *r = reynet::model::ReducedSpec::stab_restricted(order, m)?;
            }
            None => return Err(crate::usage("restrict applies to reduced models only")),
        }
    }
    Ok(spec)
}

fn load_or_generate(path: Option<&Path>, task: TaskKind, n: usize, count: usize, seed: u64) -> Result<Dataset> {
    match path {
        Some(p) => {
            let ds = load_dataset(p).with_context(|| format!("loading {}", p.display()))?;
            if ds.task != task || ds.n != n {
                bail!(
                    "{} holds {} data at n={}, the run needs {} at n={n}",
                    p.display(),
                    ds.task.name(),
                    ds.n,
                    task.name()
                );
            }
            Ok(ds)
        }
        None => Ok(generate(task, n, count, seed)?),
    }
}

fn record(cfg: &RunConfig, seed: u64, n_test: usize, epoch: usize, split: &str, mse: f64) -> MetricsRecord {
    MetricsRecord {
        task: cfg.task.clone(),
        model: cfg.model.clone(),
        loss: cfg.loss.clone(),
        n_train: cfg.n_train,
        n_test,
        seed,
        epoch,
        split: split.into(),
        mse,
    }
}

/// Train one seed: model parameters from `seed`, training data from
/// `1000 + seed`, test data from `2000 + seed` unless files are given.
/// Records the training loss of every epoch and the final test MSE (always
/// full standard MSE) at every test size.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let task = cfg.task_kind()?;
    let train_set = load_or_generate(cfg.train_data.as_deref(), task, cfg.n_train, cfg.train_count, train_data_seed(seed))?;
    let mut model = Model::build(spec_for(cfg)?, seed)?;
    let mut records = Vec::with_capacity(cfg.epochs + cfg.test_sizes().len());
    train(&mut model, &train_set, &cfg.train_config(seed)?, |epoch, loss, _| {
        records.push(record(cfg, seed, cfg.n_train, epoch, "train", loss));
        Ok(())
    })?;
    let mut test_mse = Vec::new();
    for n in cfg.test_sizes() {
        let path = cfg.test_data.as_deref().filter(|_| n == cfg.n_train);
        let test_set = load_or_generate(path, task, n, cfg.test_count, test_data_seed(seed))?;
        let mse = if n == cfg.n_train {
            evaluate_mse(&model, &test_set)?
        } else {
            evaluate_mse(&model.transfer_n(n)?, &test_set)?
        };
        records.push(record(cfg, seed, n, cfg.epochs, "test", mse));
        test_mse.push((n, mse));
    }
    Ok(RunOutcome {
        seed,
        model,
        records,
        test_mse,
    })
}

/// Every seed of `cfg`, in parallel up to the thread cap, results in seed
/// order.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    crate::with_pool(|| cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect::<Result<Vec<_>>>())?
}

pub fn checkpoint_path(dir: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    dir.join(format!("{}-{}-n{}-{}-seed{seed}.json", cfg.model, cfg.task, cfg.n_train, cfg.loss))
}

pub fn save_checkpoint(out: &RunOutcome, cfg: &RunConfig, path: &Path) -> Result<()> {
    let ck = Checkpoint::from_model(&out.model, Some(cfg.task_kind()?), out.seed, Some(cfg.train_config(out.seed)?));
    ck.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// A checkpoint's model at the size of `data`, transferring reduced models.
pub fn model_for(ck: &Checkpoint, n: usize) -> Result<Model> {
    let model = ck.to_model()?;
    if model.n() == n {
        return Ok(model);
    }
    if !model.kind().is_reduced() {
        bail!(
            "{} checkpoint was built for n={} and cannot take n={n}",
            model.kind().name(),
            model.n()
        );
    }
    Ok(model.transfer_n(n)?)
}

/// Standard MSE of a checkpoint on a dataset, as one `eval` metrics row.
pub fn evaluate_checkpoint(ck: &Checkpoint, data: &Dataset) -> Result<MetricsRecord> {
    if let Some(task) = ck.task {
        if task != data.task {
            bail!("checkpoint trained on {}, dataset holds {}", task.name(), data.task.name());
        }
    }
    let model = model_for(ck, data.n)?;
    let mse = evaluate_mse(&model, data)?;
    Ok(MetricsRecord {
        task: data.task.name().into(),
        model: ck.kind.name().into(),
        loss: ck.train.map_or("mse", |t| t.loss.name()).into(),
        n_train: ck.spec.n,
        n_test: data.n,
        seed: ck.seed,
        epoch: ck.train.map_or(0, |t| t.epochs),
        split: "eval".into(),
        mse,
    })
}

/// `(n_test, mse)` for every `n` in the range, on fresh test data of the
/// checkpoint's task drawn from `data_seed`.
pub fn sweep(ck: &Checkpoint, ns: impl IntoIterator<Item = usize>, count: usize, data_seed: u64) -> Result<Vec<(usize, f64)>> {
    if !ck.kind.is_reduced() {
        bail!("sweeps need a reduced checkpoint, got {}", ck.kind.name());
    }
    let task = ck.task.context("checkpoint does not record its task")?;
    let base = ck.to_model()?;
    let ns: Vec<usize> = ns.into_iter().collect();
    crate::with_pool(|| {
        ns.par_iter()
            .map(|&n| {
                let data = generate(task, n, count, data_seed)?;
                let model = if n == base.n() { base.clone() } else { base.transfer_n(n)? };
                Ok((n, evaluate_mse(&model, &data)?))
            })
            .collect::<Result<Vec<_>>>()
    })?
}

//! Minibatch training with Adam and test-set evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{EvalMode, Model, ModelKind};
use crate::nn::{loss, AdamConfig, AdamState, LossKind, MlpGrads};
use crate::rng::{self, streams};
use crate::tensor::DenseTensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub adam: AdamConfig,
    /// Seeds the shuffling stream.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 100,
            loss: LossKind::StandardMse,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Mean training loss of each epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    let (order, b) = model.output_shape();
    if model.n() != data.n || order != data.task.output_order() || b != 1 {
        return Err(Error::Shape(format!(
            "{} model for n={} with order-{order} outputs cannot fit {} data at n={}",
            model.kind().name(),
            model.n(),
            data.task.name(),
            data.n
        )));
    }
    Ok(())
}

/// Train in place. Each epoch visits the samples in a fresh permutation drawn
/// from the shuffle stream; the per-batch gradient is summed in sample order.
/// Corner loss evaluates only the corner calls of an equivariant network.
pub fn train<F>(model: &mut Model, data: &Dataset, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainReport>
where
    F: FnMut(usize, f64, &Model) -> Result<()>,
{
    check_compatible(model, data)?;
    if cfg.batch_size == 0 || cfg.batch_size > data.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} for {} samples",
            cfg.batch_size,
            data.len()
        )));
    }
    let mode = match cfg.loss {
        LossKind::StandardMse => EvalMode::Full,
        LossKind::CornerMse => {
            if !matches!(model.kind(), ModelKind::ReyNet | ModelKind::RedReyNet) {
                return Err(Error::InvalidArgument(format!(
                    "corner loss needs an equivariant ReyNet, not {}",
                    model.kind().name()
                )));
            }
            EvalMode::CornersOnly
        }
    };
    let sizes: Vec<usize> = model
        .mlps()
        .iter()
        .flat_map(|m| MlpGrads::zeros_like(m).slices().iter().map(|s| s.len()).collect::<Vec<_>>())
        .collect();
    let mut adam = AdamState::new(cfg.adam, &sizes);
    let mut shuffle = rng::stream(cfg.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&DenseTensor> = batch.iter().map(|&i| &data.inputs[i]).collect();
            let trace = model.forward_batch(&xs, mode)?;
            let scale = 1.0 / batch.len() as f64;
            let mut upstream = Vec::with_capacity(batch.len());
            for (&i, pred) in batch.iter().zip(trace.outputs()) {
                let (value, grad) = loss(cfg.loss, pred, &data.targets[i])?;
                total += value;
                upstream.push(grad.scaled(scale));
            }
            let grads = model.backward_batch(&trace, &upstream)?;
            let params: Vec<&mut [f64]> = model.mlps_mut().into_iter().flat_map(|m| m.param_slices_mut()).collect();
            let g: Vec<&[f64]> = grads.iter().flat_map(|g| g.slices()).collect();
            adam.step_slices(params, g)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidArgument(format!("training diverged at epoch {epoch}")));
        }
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean, model)?;
    }
    Ok(report)
}

/// Predictions in batches of `chunk` samples.
pub fn predict(model: &Model, inputs: &[DenseTensor], chunk: usize) -> Result<Vec<DenseTensor>> {
    let mut out = Vec::with_capacity(inputs.len());
    for part in inputs.chunks(chunk.max(1)) {
        let xs: Vec<&DenseTensor> = part.iter().collect();
        match model.forward_batch(&xs, EvalMode::Full)? {
            crate::model::ModelTrace::Equivariant(t) => out.extend(t.into_outputs()),
            trace => out.extend(trace.outputs().iter().cloned()),
        }
    }
    Ok(out)
}

/// Standard MSE over every output entry of every sample, whatever loss the
/// model was trained with.
pub fn evaluate_mse(model: &Model, data: &Dataset) -> Result<f64> {
    check_compatible(model, data)?;
    let preds = predict(model, &data.inputs, 100)?;
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(&data.targets) {
        total += loss(LossKind::StandardMse, p, t)?.0;
    }
    Ok(total / data.len() as f64)
}

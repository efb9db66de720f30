use rayon::prelude::*;

use super::handle::DatasetHandle;
use crate::error::{Error, Result};
use crate::gaze::{angular_error, GazeLabel, GazeSample};
use crate::nn::Backbone;
use crate::runtime;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Mean angular error in degrees.
    pub mean: f64,
    pub per_sample: Vec<f64>,
    pub predictions: Vec<GazeLabel>,
}

fn eval_chunk(model: &dyn Backbone, chunk: &[GazeSample]) -> Result<Vec<(GazeLabel, f64)>> {
    let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
    let preds = model.predict(&Tensor::stack(&images)?)?;
    preds
        .into_iter()
        .zip(chunk)
        .map(|(p, s)| {
            let truth = s.label.expect("labels checked before evaluation");
            Ok((p, angular_error(p, truth)?))
        })
        .collect()
}

/// Mean and per-sample angular error over the whole handle. Labels are read
/// even when hidden from consumers; unlabeled samples are an error.
pub fn evaluate(model: &dyn Backbone, data: &DatasetHandle) -> Result<EvalReport> {
    let samples = data.samples();
    if samples.is_empty() {
        return Err(Error::invalid("evaluation over an empty dataset"));
    }
    if let Some(i) = samples.iter().position(|s| s.label.is_none()) {
        return Err(Error::invalid(format!("sample {i} has no label to evaluate against")));
    }
    let chunks: Vec<&[GazeSample]> = samples.chunks(EVAL_CHUNK).collect();
    let parts: Vec<Vec<(GazeLabel, f64)>> = if runtime::parallel() {
        chunks.par_iter().map(|c| eval_chunk(model, c)).collect::<Result<_>>()?
    } else {
        chunks.iter().map(|c| eval_chunk(model, c)).collect::<Result<_>>()?
    };
    let (predictions, per_sample): (Vec<GazeLabel>, Vec<f64>) = parts.into_iter().flatten().unzip();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(EvalReport {
        mean,
        per_sample,
        predictions,
    })
}

/// Percent improvement `100 (before - after) / before`; negative when the
/// error grew.
pub fn improvement_report(before: f64, after: f64) -> Result<f64> {
    if !(before > 0.0) || !after.is_finite() {
        return Err(Error::invalid(format!(
            "improvement needs before > 0 and finite after, got {before} -> {after}"
        )));
    }
    Ok(100.0 * (before - after) / before)
}

/// One-decimal rendering used in reports.
pub fn format_improvement(percent: f64) -> String {
    format!("{:.1}", percent + 0.0)
}

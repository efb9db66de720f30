use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use super::outlier::{standardized_loss, GroupStats};
use super::LossGrad;
use crate::error::{Error, Result};

/// Mean absolute error between source predictions and labels (B x 2).
pub fn source_gaze_loss(
    pred: ArrayView2<'_, f64>,
    label: ArrayView2<'_, f64>,
) -> Result<LossGrad<Array2<f64>>> {
    if pred.dim() != label.dim() {
        return Err(Error::shape(format!(
            "predictions {:?} vs labels {:?}",
            pred.dim(),
            label.dim()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::invalid("source loss over an empty batch"));
    }
    let mut value = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    for (g, (&p, &y)) in grad.iter_mut().zip(pred.iter().zip(label.iter())) {
        let r = p - y;
        value += r.abs();
        if r != 0.0 {
            *g = r.signum() / n as f64;
        }
    }
    Ok(LossGrad {
        value: value / n as f64,
        grad,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    L1,
    L2,
}

/// Plain L1 or L2 penalty on the standardized deviation, interchangeable with
/// the outlier-guided loss.
pub fn baseline_loss(
    predictions: ArrayView3<'_, f64>,
    stats: &GroupStats,
    kind: BaselineKind,
) -> Result<LossGrad<Array3<f64>>> {
    standardized_loss(predictions, stats, |d| baseline_pointwise(d, kind))
}

/// Value and derivative of the baseline penalty at `d`.
pub fn baseline_pointwise(d: f64, kind: BaselineKind) -> (f64, f64) {
    match kind {
        BaselineKind::L1 => (d.abs(), if d == 0.0 { 0.0 } else { d.signum() }),
        BaselineKind::L2 => (d * d, 2.0 * d),
    }
}

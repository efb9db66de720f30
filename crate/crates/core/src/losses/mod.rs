//! Training objectives.
//!
//! Every loss returns its value together with the gradient in its
//! differentiable input, so the engine can backpropagate through the
//! backbones without a general autodiff tape.

pub mod curve;
pub mod feature;
pub mod normal;
pub mod outlier;
pub mod regression;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

pub use curve::{loss_curve_export, write_loss_curve, LossCurveRow};
pub use feature::{js_feature_loss, js_feature_loss_unweighted, JsLoss};
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
pub use outlier::{group_stats, og_loss, GroupStats, OgLossParams, StatsSource};
pub use regression::{baseline_loss, source_gaze_loss, BaselineKind};

use crate::error::{Error, Result};

/// A scalar loss and its gradient with respect to one input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<G> {
    pub value: f64,
    pub grad: G,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(LossWeights { lambda1, lambda2 })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.01,
            lambda2: 0.1,
        }
    }
}

/// `lambda1 * js + sg + lambda2 * (og + og_momentum)`.
///
/// A non-finite term or result is reported as divergence at `iteration`.
pub fn total_loss(
    l_js: f64,
    l_sg: f64,
    l_og_online: f64,
    l_og_momentum: f64,
    weights: &LossWeights,
    iteration: usize,
) -> Result<f64> {
    let total = weights.lambda1 * l_js + l_sg + weights.lambda2 * (l_og_online + l_og_momentum);
    if [l_js, l_sg, l_og_online, l_og_momentum, total]
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::Diverged {
            iteration,
            value: total,
        });
    }
    Ok(total)
}

/// Which penalty is applied to standardized group deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationLoss {
    #[default]
    Og,
    L1,
    L2,
}

impl DeviationLoss {
    pub fn evaluate(
        self,
        predictions: ArrayView3<'_, f64>,
        stats: &GroupStats,
        params: &OgLossParams,
    ) -> Result<LossGrad<Array3<f64>>> {
        match self {
            DeviationLoss::Og => og_loss(predictions, stats, params),
            DeviationLoss::L1 => baseline_loss(predictions, stats, BaselineKind::L1),
            DeviationLoss::L2 => baseline_loss(predictions, stats, BaselineKind::L2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DeviationLoss::Og => "og",
            DeviationLoss::L1 => "l1",
            DeviationLoss::L2 => "l2",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w, 1).unwrap(), 0.0);
        let t = total_loss(1.0, 2.0, 3.0, 4.0, &w, 1).unwrap();
        assert!((t - 2.71).abs() < 1e-12);
        let zero = LossWeights::new(0.0, 0.0).unwrap();
        assert_eq!(total_loss(5.0, 1.25, 7.0, 9.0, &zero, 1).unwrap(), 1.25);
    }

    #[test]
    fn total_is_linear_per_term() {
        let w = LossWeights::new(0.3, 0.7).unwrap();
        let base = [0.5, 1.5, 2.5, 3.5];
        let f = |v: [f64; 4]| total_loss(v[0], v[1], v[2], v[3], &w, 1).unwrap();
        let coeffs = [0.3, 1.0, 0.7, 0.7];
        for (i, c) in coeffs.iter().enumerate() {
            let mut v = base;
            v[i] += 2.0;
            assert!(((f(v) - f(base)) / 2.0 - c).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_diverges() {
        let w = LossWeights::default();
        assert!(matches!(
            total_loss(f64::NAN, 0.0, 0.0, 0.0, &w, 4),
            Err(Error::Diverged { iteration: 4, .. })
        ));
        assert!(total_loss(0.0, f64::INFINITY, 0.0, 0.0, &w, 1).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(-1.0, 0.0).is_err());
        assert!(LossWeights::new(0.0, f64::NAN).is_err());
    }
}

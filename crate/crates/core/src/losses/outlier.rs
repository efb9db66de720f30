//! Group statistics and the outlier-guided loss.
//!
//! A group of `H` models produces an `H x B x C` prediction stack. Each
//! (batch element, component) cell gets its own mean and unbiased standard
//! deviation across the group; a prediction is standardized against these as
//! `d = (g - mu) / sigma`. Inside the reliable band `|d| <= u` only the small
//! `gamma * |Phi(d) - 1/2|` term acts; beyond it `|d|` is added, which gives
//! outliers a much steeper gradient.
//!
//! Statistics are always treated as constants when differentiating: for
//! momentum statistics because the momentum group is never trained, and for
//! online statistics so that members are pulled toward the consensus instead
//! of dragging it toward themselves.

use ndarray::{Array2, Array3, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use super::normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
use super::LossGrad;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;

/// Hyperparameters of the outlier-guided loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OgLossParams {
    gamma: f64,
    epsilon: f64,
    quantile_u: f64,
    sigma_floor: f64,
}

impl OgLossParams {
    pub fn new(gamma: f64, epsilon: f64) -> Result<Self> {
        Self::with_sigma_floor(gamma, epsilon, DEFAULT_SIGMA_FLOOR)
    }

    pub fn with_sigma_floor(gamma: f64, epsilon: f64, sigma_floor: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 0.5), got {epsilon}"
            )));
        }
        if !(sigma_floor.is_finite() && sigma_floor > 0.0) {
            return Err(Error::invalid(format!(
                "sigma floor must be > 0, got {sigma_floor}"
            )));
        }
        Ok(OgLossParams {
            gamma,
            epsilon,
            quantile_u: std_normal_quantile(1.0 - epsilon)?,
            sigma_floor,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The `(1 - epsilon)` standard normal quantile.
    pub fn quantile_u(&self) -> f64 {
        self.quantile_u
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        *self = Self::with_sigma_floor(self.gamma, epsilon, self.sigma_floor)?;
        Ok(())
    }
}

impl Default for OgLossParams {
    fn default() -> Self {
        Self::new(0.01, 0.05).expect("default OG parameters are valid")
    }
}

/// Which group the statistics were estimated from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    Online,
    Momentum,
}

/// Per (batch element, component) mean and floored standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub mu: Array2<f64>,
    pub sigma: Array2<f64>,
    pub source: StatsSource,
}

impl GroupStats {
    pub fn dim(&self) -> (usize, usize) {
        self.mu.dim()
    }
}

pub fn group_stats(
    predictions: ArrayView3<'_, f64>,
    source: StatsSource,
    sigma_floor: f64,
) -> Result<GroupStats> {
    let (h, b, c) = predictions.dim();
    if h < 2 {
        return Err(Error::invalid(format!(
            "group statistics need at least 2 members, got {h}"
        )));
    }
    let mut mu = Array2::zeros((b, c));
    let mut sigma = Array2::zeros((b, c));
    for i in 0..b {
        for j in 0..c {
            let mut mean = 0.0;
            for k in 0..h {
                mean += predictions[[k, i, j]];
            }
            mean /= h as f64;
            let mut ss = 0.0;
            for k in 0..h {
                let r = predictions[[k, i, j]] - mean;
                ss += r * r;
            }
            mu[[i, j]] = mean;
            sigma[[i, j]] = (ss / (h - 1) as f64).sqrt().max(sigma_floor);
        }
    }
    Ok(GroupStats { mu, sigma, source })
}

/// Standardized deviations `d = (g - mu) / sigma` for every prediction.
pub fn standardize(predictions: ArrayView3<'_, f64>, stats: &GroupStats) -> Result<Array3<f64>> {
    let (h, b, c) = predictions.dim();
    if stats.dim() != (b, c) || stats.sigma.dim() != (b, c) {
        return Err(Error::shape(format!(
            "predictions {h}x{b}x{c} vs statistics {:?}",
            stats.dim()
        )));
    }
    let mut d = Array3::zeros((h, b, c));
    for k in 0..h {
        Zip::from(d.index_axis_mut(ndarray::Axis(0), k))
            .and(predictions.index_axis(ndarray::Axis(0), k))
            .and(&stats.mu)
            .and(&stats.sigma)
            .for_each(|d, &g, &m, &s| *d = (g - m) / s);
    }
    Ok(d)
}

/// Pointwise outlier-guided loss of a standardized deviation.
pub fn og_pointwise(d: f64, params: &OgLossParams) -> f64 {
    let smooth = params.gamma * (std_normal_cdf(d) - 0.5).abs();
    if d.abs() > params.quantile_u {
        smooth + d.abs()
    } else {
        smooth
    }
}

/// Derivative of [`og_pointwise`] in `d`, with the indicator held fixed.
pub fn og_pointwise_grad(d: f64, params: &OgLossParams) -> f64 {
    let sign = if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    };
    let mut g = params.gamma * sign * std_normal_pdf(d);
    if d.abs() > params.quantile_u {
        g += sign;
    }
    g
}

/// Mean outlier-guided loss over group, batch and components, with its
/// gradient in the predictions.
pub fn og_loss(
    predictions: ArrayView3<'_, f64>,
    stats: &GroupStats,
    params: &OgLossParams,
) -> Result<LossGrad<Array3<f64>>> {
    standardized_loss(predictions, stats, |d| {
        (og_pointwise(d, params), og_pointwise_grad(d, params))
    })
}

/// Fraction of predictions flagged as outliers (`|d| > u`).
pub fn outlier_fraction(
    predictions: ArrayView3<'_, f64>,
    stats: &GroupStats,
    params: &OgLossParams,
) -> Result<f64> {
    let d = standardize(predictions, stats)?;
    let n = d.len().max(1);
    Ok(d.iter().filter(|v| v.abs() > params.quantile_u).count() as f64 / n as f64)
}

/// Shared driver for losses that are a mean of a pointwise function of `d`.
pub(crate) fn standardized_loss(
    predictions: ArrayView3<'_, f64>,
    stats: &GroupStats,
    pointwise: impl Fn(f64) -> (f64, f64),
) -> Result<LossGrad<Array3<f64>>> {
    let d = standardize(predictions, stats)?;
    let (h, b, c) = predictions.dim();
    let n = (h * b * c) as f64;
    if n == 0.0 {
        return Err(Error::invalid("loss over an empty prediction stack"));
    }
    let mut value = 0.0;
    let mut grad = Array3::zeros((h, b, c));
    for k in 0..h {
        for i in 0..b {
            for j in 0..c {
                let (v, dv) = pointwise(d[[k, i, j]]);
                value += v;
                grad[[k, i, j]] = dv / stats.sigma[[i, j]] / n;
            }
        }
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

//! Gaze direction types and the angular-error metric.
//!
//! Angles are radians everywhere except at the reporting boundary, where
//! [`angular_error`] returns degrees.
//!
//! The pitch/yaw ingestion bounds (`|pitch| <= pi/2`, `|yaw| <= pi`) are a
//! convention of this crate; labelled datasets in the wild do not always state
//! their ranges or handedness.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaze direction as (pitch, yaw) in radians.
///
/// Network predictions use the same type and are unconstrained; only
/// [`GazeLabel::new`] enforces the ingestion bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeLabel {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeLabel {
    /// Validated constructor for ground-truth labels.
    pub fn new(pitch: f64, yaw: f64) -> Result<Self> {
        if !pitch.is_finite() || !yaw.is_finite() {
            return Err(Error::invalid(format!(
                "non-finite gaze label ({pitch}, {yaw})"
            )));
        }
        if pitch.abs() > FRAC_PI_2 || yaw.abs() > PI {
            return Err(Error::invalid(format!(
                "gaze label ({pitch}, {yaw}) outside pitch [-pi/2, pi/2] / yaw [-pi, pi]"
            )));
        }
        Ok(GazeLabel { pitch, yaw })
    }

    /// Unchecked constructor for model outputs.
    pub const fn prediction(pitch: f64, yaw: f64) -> Self {
        GazeLabel { pitch, yaw }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.pitch, self.yaw]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

/// One image (C x H x W, values in [0, 1]) with an optional label.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeSample {
    pub image: Tensor,
    pub label: Option<GazeLabel>,
    pub domain: DomainTag,
}

/// Images of a single domain stacked into a B x C x H x W tensor.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub images: Tensor,
    pub labels: Option<Vec<GazeLabel>>,
    pub domain: DomainTag,
}

impl SampleBatch {
    pub fn from_samples(samples: &[&GazeSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("empty batch"))?;
        let domain = first.domain;
        if samples.iter().any(|s| s.domain != domain) {
            return Err(Error::invalid("batch mixes source and target samples"));
        }
        let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
        let images = Tensor::stack(&images)?;
        let labels: Option<Vec<GazeLabel>> = samples.iter().map(|s| s.label).collect();
        Ok(SampleBatch {
            images,
            labels,
            domain,
        })
    }

    pub fn from_images(images: Tensor, domain: DomainTag) -> Self {
        SampleBatch {
            images,
            labels: None,
            domain,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.images.rows()
    }
}

/// Converts (pitch, yaw) to a unit vector `(cos p sin y, sin p, cos p cos y)`.
pub fn gaze_to_vector(label: GazeLabel) -> Result<[f64; 3]> {
    if !label.pitch.is_finite() || !label.yaw.is_finite() {
        return Err(Error::invalid(format!(
            "non-finite gaze ({}, {})",
            label.pitch, label.yaw
        )));
    }
    let (sp, cp) = label.pitch.sin_cos();
    let (sy, cy) = label.yaw.sin_cos();
    Ok([cp * sy, sp, cp * cy])
}

/// Angle between two gaze directions, in degrees.
pub fn angular_error(pred: GazeLabel, truth: GazeLabel) -> Result<f64> {
    let a = gaze_to_vector(pred)?;
    let b = gaze_to_vector(truth)?;
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    // atan2 equals acos(clamp(dot)) for unit vectors, stays exact at 0 and
    // well conditioned near 0 and 180 degrees.
    Ok(sin.atan2(dot.clamp(-1.0, 1.0)).to_degrees())
}

pub fn mean_angular_error(preds: &[GazeLabel], truths: &[GazeLabel]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::invalid("mean angular error of an empty list"));
    }
    if preds.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predictions vs {} labels",
            preds.len(),
            truths.len()
        )));
    }
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(truths) {
        sum += angular_error(*p, *t)?;
    }
    Ok(sum / preds.len() as f64)
}

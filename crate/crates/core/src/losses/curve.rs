//! Tabulation of the deviation penalties for plotting.

use std::fmt::Write as _;
use std::path::Path;

use super::outlier::{og_pointwise, OgLossParams};
use super::regression::{baseline_pointwise, BaselineKind};
use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "d,og,l1,l2";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCurveRow {
    pub d: f64,
    pub og: f64,
    pub l1: f64,
    pub l2: f64,
}

impl LossCurveRow {
    pub fn at(d: f64, params: &OgLossParams) -> Self {
        LossCurveRow {
            d,
            og: og_pointwise(d, params),
            l1: baseline_pointwise(d, BaselineKind::L1).0,
            l2: baseline_pointwise(d, BaselineKind::L2).0,
        }
    }
}

/// Evaluates the three penalties on `n_points` evenly spaced values of `d`
/// over `[lo, hi]`. The grid is symmetric, so an odd count puts `d = 0`
/// exactly on a row.
pub fn loss_curve_export(
    params: &OgLossParams,
    range: (f64, f64),
    n_points: usize,
) -> Result<Vec<LossCurveRow>> {
    if n_points < 2 {
        return Err(Error::invalid(format!("need at least 2 points, got {n_points}")));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid(format!("bad curve range [{lo}, {hi}]")));
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let last = (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            // (2i - last) / last is exactly 0 at the centre of an odd grid.
            let t = (2.0 * i as f64 - last) / last;
            LossCurveRow::at(mid + half * t, params)
        })
        .collect())
}

pub fn format_loss_curve(rows: &[LossCurveRow]) -> String {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        // `+ 0.0` folds -0.0 into 0.0.
        let _ = writeln!(out, "{},{},{},{}", r.d + 0.0, r.og + 0.0, r.l1 + 0.0, r.l2 + 0.0);
    }
    out
}

pub fn write_loss_curve(path: &Path, rows: &[LossCurveRow]) -> Result<()> {
    std::fs::write(path, format_loss_curve(rows)).map_err(|e| Error::io(path, e))
}

use rayon::prelude::*;

use super::adapt::{adapt, AdaptOptions};
use super::config::AdaptConfig;
use crate::checkpoint::Checkpoint;
use crate::data::{evaluate, DatasetHandle};
use crate::ensemble::init_group;
use crate::error::{Error, Result};
use crate::nn::BackboneFactory;
use crate::runtime;

#[derive(Clone, Debug)]
pub struct Variant {
    pub name: String,
    pub config: AdaptConfig,
    pub checkpoints: Vec<Checkpoint>,
}

/// Target error of one variant across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub errors: Vec<f64>,
    pub mean: f64,
    /// Unbiased sample standard deviation; `None` for a single seed.
    pub std: Option<f64>,
}

impl AblationRow {
    pub fn from_errors(variant: impl Into<String>, errors: Vec<f64>) -> Result<Self> {
        let (mean, std) = mean_std(&errors)?;
        Ok(AblationRow {
            variant: variant.into(),
            errors,
            mean,
            std,
        })
    }

    /// `5.53_{±0.24}`, or just `5.53` without a spread.
    pub fn cell(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2}_{{±{:.2}}}", self.mean, s),
            None => format!("{:.2}", self.mean),
        }
    }
}

pub fn mean_std(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::invalid("mean of an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Ok((mean, None));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, Some((ss / (n - 1.0)).sqrt())))
}

pub const ABLATION_HEADER: &str = "variant,mean,std,seeds,cell";

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        let std = r.std.map(|s| format!("{s:.4}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.4},{},{},{}\n",
            r.variant,
            r.mean,
            std,
            r.errors.len(),
            r.cell()
        ));
    }
    out
}

fn same_checkpoints(a: &[Checkpoint], b: &[Checkpoint]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.id == y.id && x.architecture == y.architecture && x.params == y.params)
}

/// Adapts every variant from the shared checkpoints once per seed and
/// reports member 1's mean target error.
pub fn ablation_matrix(
    variants: &[Variant],
    factory: &(dyn BackboneFactory + Sync),
    source: &DatasetHandle,
    target: &DatasetHandle,
    eval: &DatasetHandle,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    let first = variants
        .first()
        .ok_or_else(|| Error::invalid("ablation grid has no variants"))?;
    if let Some(v) = variants[1..].iter().find(|v| !same_checkpoints(&v.checkpoints, &first.checkpoints)) {
        return Err(Error::invalid(format!(
            "variant `{}` uses a different checkpoint set than `{}`",
            v.name, first.name
        )));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("ablation grid needs at least one seed"));
    }
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run = |&(v, seed): &(usize, u64)| -> Result<f64> {
        let variant = &variants[v];
        let mut cfg = variant.config.clone();
        cfg.seed = seed;
        let state = init_group(&variant.checkpoints, factory, cfg.alpha)?;
        let opts = AdaptOptions {
            checkpoint_ids: variant.checkpoints.iter().map(|c| c.id.clone()).collect(),
            ..Default::default()
        };
        let out = adapt(state, source, &target.hidden(), &cfg, &opts)?;
        Ok(evaluate(out.state.online()[0].as_ref(), eval)?.mean)
    };
    let errors: Vec<f64> = if runtime::parallel() {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run).collect::<Result<_>>()?
    };
    variants
        .iter()
        .enumerate()
        .map(|(v, variant)| {
            let e = errors[v * seeds.len()..(v + 1) * seeds.len()].to_vec();
            AblationRow::from_errors(variant.name.clone(), e)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unbiased_std_matches_scalar_oracle() {
        let xs = [5.1, 5.6, 5.3, 5.9, 5.75];
        let (m, s) = mean_std(&xs).unwrap();
        let mut mean = 0.0;
        for x in xs {
            mean += x;
        }
        mean /= 5.0;
        let mut var = 0.0;
        for x in xs {
            var += (x - mean) * (x - mean);
        }
        var /= 4.0;
        assert!((m - mean).abs() < 1e-12);
        assert!((s.unwrap() - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cell_format() {
        let r = AblationRow {
            variant: "final".into(),
            errors: vec![],
            mean: 5.529,
            std: Some(0.2449),
        };
        assert_eq!(r.cell(), "5.53_{±0.24}");
        let single = AblationRow::from_errors("x", vec![5.529]).unwrap();
        assert_eq!(single.cell(), "5.53");
        let table = format_ablation(&[single]);
        assert_eq!(table.lines().nth(1).unwrap(), "x,5.5290,,1,5.53");
    }
}

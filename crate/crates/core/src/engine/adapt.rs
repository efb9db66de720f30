//! The collaborative adaptation loop.
//!
//! Each online member `k` minimises its own objective
//!
//! ```text
//! L_k = lambda1 * js_k + sg_k + lambda2 * (og_k + og_m_k)
//! ```
//!
//! and the logged components are means over members, so the logged total
//! obeys the same combination. Term by term:
//!
//! * `js_k`: symmetric KL between softmaxed features of online member `k` and
//!   its momentum twin on the target batch (momentum side constant).
//! * `og_k`: online predictions standardized against momentum-group
//!   statistics.
//! * `og_m_k`: with `2oma`, online predictions standardized against the
//!   online group's own statistics; with `oma` alone, momentum predictions
//!   against momentum statistics, which carries no gradient.
//! * `sg_k`: L1 on the labelled source batch.
//!
//! Group statistics are always treated as constants.

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array3};
use rayon::prelude::*;

use super::config::AdaptConfig;
use super::manifest::{EvalSnapshot, LossRow, RunManifest, RunStatus};
use super::pretrain::{supervised_grads, to_tensor};
use crate::data::{choose_subset, evaluate, DatasetHandle, EpochSampler, LabelVisibility};
use crate::ensemble::{ema_update, group_forward, GroupOutputs, GroupState};
use crate::error::{Error, Result};
use crate::losses::{group_stats, js_feature_loss, total_loss, StatsSource};
use crate::nn::{Backbone, ParamSet};
use crate::optim::Adam;
use crate::runtime;
use crate::tensor::Tensor;

/// Location of a single scalar parameter to trace during a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamProbe {
    pub member: usize,
    pub tensor: String,
    pub index: usize,
}

/// Per-run extras that do not belong in the configuration.
#[derive(Clone, Debug, Default)]
pub struct AdaptOptions<'a> {
    /// Labelled data for periodic evaluation of member 1.
    pub eval_data: Option<&'a DatasetHandle>,
    /// Evaluate every this many iterations (0 disables snapshots).
    pub eval_every: usize,
    /// Where to write the manifest and loss log, on success and on failure.
    pub out_dir: Option<&'a Path>,
    pub probe: Option<ParamProbe>,
    pub checkpoint_ids: Vec<String>,
    /// Echoed verbatim into the manifest.
    pub resolved_config: Option<serde_json::Value>,
}

#[derive(Debug)]
pub struct AdaptOutcome {
    pub state: GroupState,
    pub manifest: RunManifest,
    /// Online value of the probed parameter after each optimizer step.
    pub probe_trace: Vec<f32>,
}

fn slice_member(a: &Array3<f64>, k: usize) -> Tensor {
    to_tensor(&a.slice(s![k, .., ..]).to_owned())
}

fn check_inputs(state: &GroupState, source: &DatasetHandle, target: &DatasetHandle, cfg: &AdaptConfig) -> Result<()> {
    cfg.validate()?;
    if state.size() != cfg.h {
        return Err(Error::Config(format!(
            "config asks for H = {} but the group has {} members",
            cfg.h,
            state.size()
        )));
    }
    // Inspect the raw samples so the check itself is not counted as access.
    if target.visibility() == LabelVisibility::Visible && target.samples().iter().any(|s| s.label.is_some()) {
        return Err(Error::ContractViolation(
            "target data must not expose labels during adaptation".into(),
        ));
    }
    if cfg.n > 0 {
        if target.is_empty() {
            return Err(Error::invalid("empty target subset"));
        }
        if cfg.ablation.sg() && (source.is_empty() || !source.is_labeled()) {
            return Err(Error::invalid("source constraint needs labelled source data"));
        }
    }
    Ok(())
}

/// Gradients of every online member for one iteration plus the logged row.
fn iteration_grads(
    state: &GroupState,
    source_batch: Option<&crate::gaze::SampleBatch>,
    target_batch: &crate::gaze::SampleBatch,
    cfg: &AdaptConfig,
    iter: usize,
) -> Result<(LossRow, Vec<ParamSet>)> {
    let h = state.size();
    let ab = &cfg.ablation;
    let params = cfg.og_params()?;
    let weights = cfg.weights()?;
    let hf = h as f64;

    let need_target = ab.js() || ab.oma();
    let (online, momentum): (Option<GroupOutputs>, Option<GroupOutputs>) = if need_target {
        (
            Some(group_forward(state.online(), target_batch)?),
            Some(group_forward(state.momentum(), target_batch)?),
        )
    } else {
        (None, None)
    };
    let b = target_batch.batch_size();
    let mut grad_pred = Array3::<f64>::zeros((h, b, 2));
    let mut grad_feat: Option<Array3<f64>> = None;
    let (mut js, mut og, mut og_m) = (0.0, 0.0, 0.0);

    if let (Some(on), Some(mo)) = (&online, &momentum) {
        if ab.js() {
            let f = on.features.dim().2;
            let mut gf = Array3::<f64>::zeros((h, b, f));
            for k in 0..h {
                let l = js_feature_loss(
                    on.features.slice(s![k, .., ..]),
                    mo.features.slice(s![k, .., ..]),
                )?;
                js += l.value / hf;
                gf.slice_mut(s![k, .., ..]).assign(&(l.grad_online * weights.lambda1));
            }
            grad_feat = Some(gf);
        }
        if ab.oma() {
            let stats_m = group_stats(mo.predictions.view(), StatsSource::Momentum, params.sigma_floor())?;
            let l = cfg.og_variant.evaluate(on.predictions.view(), &stats_m, &params)?;
            og = l.value;
            grad_pred.scaled_add(weights.lambda2 * hf, &l.grad);
            if ab.two_oma() {
                let stats_o = group_stats(on.predictions.view(), StatsSource::Online, params.sigma_floor())?;
                let l = cfg.og_variant.evaluate(on.predictions.view(), &stats_o, &params)?;
                og_m = l.value;
                grad_pred.scaled_add(weights.lambda2 * hf, &l.grad);
            } else {
                og_m = cfg.og_variant.evaluate(mo.predictions.view(), &stats_m, &params)?.value;
            }
        }
    }

    let member = |k: usize| -> Result<(f64, ParamSet)> {
        let model: &dyn Backbone = state.online()[k].as_ref();
        let mut grads = model.params().zeros_like();
        if let Some(on) = &online {
            let gf = grad_feat.as_ref().map(|g| slice_member(g, k));
            let g = model.backward(&on.passes[k], gf.as_ref(), &slice_member(&grad_pred, k))?;
            grads.add_assign(&g)?;
        }
        let mut sg = 0.0;
        if let Some(batch) = source_batch {
            let (v, g) = supervised_grads(model, batch)?;
            sg = v;
            grads.add_assign(&g)?;
        }
        Ok((sg, grads))
    };
    let per_member: Vec<(f64, ParamSet)> = if runtime::parallel() {
        (0..h).into_par_iter().map(member).collect::<Result<_>>()?
    } else {
        (0..h).map(member).collect::<Result<_>>()?
    };
    let sg = per_member.iter().map(|(v, _)| v).sum::<f64>() / hf;
    let total = total_loss(js, sg, og, og_m, &weights, iter)?;
    let row = LossRow {
        iter,
        js,
        sg,
        og,
        og_m,
        total,
    };
    Ok((row, per_member.into_iter().map(|(_, g)| g).collect()))
}

fn probe_value(state: &GroupState, probe: &ParamProbe) -> Result<f32> {
    let member = state
        .online()
        .get(probe.member)
        .ok_or_else(|| Error::invalid(format!("probe member {} out of range", probe.member)))?;
    let t = member
        .params()
        .get(&probe.tensor)
        .ok_or_else(|| Error::invalid(format!("probe tensor `{}` not found", probe.tensor)))?;
    t.data()
        .get(probe.index)
        .copied()
        .ok_or_else(|| Error::invalid(format!("probe index {} out of range", probe.index)))
}

/// Runs `cfg.n` adaptation iterations on the group.
///
/// The target handle must hide its labels; at most `cfg.target_budget` of
/// its images are ever read. On divergence the partial manifest is written
/// to `opts.out_dir` before the error is returned.
pub fn adapt(
    mut state: GroupState,
    source: &DatasetHandle,
    target: &DatasetHandle,
    cfg: &AdaptConfig,
    opts: &AdaptOptions<'_>,
) -> Result<AdaptOutcome> {
    let started = Instant::now();
    check_inputs(&state, source, target, cfg)?;
    let mut manifest = RunManifest::new(cfg, opts.checkpoint_ids.clone());
    manifest.resolved_config = opts.resolved_config.clone();
    let mut probe_trace = Vec::new();
    if let Some(p) = &opts.probe {
        probe_value(&state, p)?;
    }

    let budget = cfg.target_budget.min(target.len());
    let target_pool = choose_subset(target.len(), budget, cfg.seed ^ 0x7a26_e7)?;
    manifest.target_indices = target_pool.clone();
    let source_pool = choose_subset(source.len(), cfg.source_subset.min(source.len()), cfg.seed ^ 0x50_c0de)?;

    let ab = &cfg.ablation;
    let any_term = ab.js() || ab.oma() || ab.sg();
    let mut adams: Vec<Adam> = state
        .online()
        .iter()
        .map(|m| Adam::new(m.params(), cfg.adam()))
        .collect();

    if cfg.n > 0 {
        let mut tsampler = EpochSampler::new(target_pool, cfg.seed ^ 0x7a_5a)?;
        let mut ssampler = if ab.sg() {
            Some(EpochSampler::new(source_pool, cfg.seed ^ 0x50_5a)?)
        } else {
            None
        };
        for _ in 0..cfg.n {
            let iter = state.iteration();
            let target_batch = target.batch(&tsampler.next_batch(cfg.batch_size_target))?;
            let source_batch = match ssampler.as_mut() {
                Some(s) => Some(source.batch(&s.next_batch(cfg.batch_size_source))?),
                None => None,
            };
            let (row, grads) = match iteration_grads(&state, source_batch.as_ref(), &target_batch, cfg, iter) {
                Ok(v) => v,
                Err(e) => {
                    if matches!(e, Error::Diverged { .. }) {
                        manifest.status = RunStatus::Diverged;
                        finish(&mut manifest, target, started, opts)?;
                    }
                    return Err(e);
                }
            };
            if any_term {
                let step = |(m, (a, g)): (&mut Box<dyn Backbone>, (&mut Adam, &ParamSet))| a.step(m.params_mut(), g);
                if runtime::parallel() {
                    state
                        .online_mut()
                        .par_iter_mut()
                        .zip(adams.par_iter_mut().zip(grads.par_iter()))
                        .map(step)
                        .collect::<Result<()>>()?;
                } else {
                    state
                        .online_mut()
                        .iter_mut()
                        .zip(adams.iter_mut().zip(grads.iter()))
                        .map(step)
                        .collect::<Result<()>>()?;
                }
            }
            if let Some(p) = &opts.probe {
                probe_trace.push(probe_value(&state, p)?);
            }
            ema_update(&mut state);
            manifest.push_loss(row);
            if let Some(data) = opts.eval_data {
                if opts.eval_every > 0 && manifest.iterations % opts.eval_every == 0 {
                    manifest.evaluations.push(EvalSnapshot {
                        iteration: manifest.iterations,
                        mean_error: evaluate(state.online()[0].as_ref(), data)?.mean,
                    });
                }
            }
        }
    }
    if let Some(data) = opts.eval_data {
        manifest.final_error = Some(evaluate(state.online()[0].as_ref(), data)?.mean);
    }
    manifest.status = RunStatus::Completed;
    finish(&mut manifest, target, started, opts)?;
    Ok(AdaptOutcome {
        state,
        manifest,
        probe_trace,
    })
}

fn finish(manifest: &mut RunManifest, target: &DatasetHandle, started: Instant, opts: &AdaptOptions<'_>) -> Result<()> {
    manifest.target_images_read = target.access_count();
    manifest.target_label_accesses = target.label_access_count();
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = opts.out_dir {
        manifest.save(dir)?;
    }
    Ok(())
}

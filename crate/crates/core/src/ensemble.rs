//! The online model group and its momentum (EMA) twin.
//!
//! Member `#1` in reports is index 0 here.

use ndarray::Array3;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::gaze::SampleBatch;
use crate::nn::{Backbone, BackboneFactory, ForwardPass};
use crate::runtime;

#[derive(Clone, Debug)]
pub struct GroupState {
    online: Vec<Box<dyn Backbone>>,
    momentum: Vec<Box<dyn Backbone>>,
    alpha: f64,
    iteration: usize,
}

impl GroupState {
    pub fn size(&self) -> usize {
        self.online.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// 1-based iteration counter, 1 right after initialization.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn online(&self) -> &[Box<dyn Backbone>] {
        &self.online
    }

    /// Online members are the only ones exposed for optimization.
    pub fn online_mut(&mut self) -> &mut [Box<dyn Backbone>] {
        &mut self.online
    }

    pub fn momentum(&self) -> &[Box<dyn Backbone>] {
        &self.momentum
    }
}

pub fn init_group(
    checkpoints: &[Checkpoint],
    factory: &dyn BackboneFactory,
    alpha: f64,
) -> Result<GroupState> {
    if checkpoints.len() < 2 {
        return Err(Error::invalid(format!(
            "a group needs at least 2 members, got {}",
            checkpoints.len()
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let arch_id = factory.architecture_id();
    let mut online = Vec::with_capacity(checkpoints.len());
    for ckpt in checkpoints {
        if ckpt.architecture.id() != arch_id {
            return Err(Error::CheckpointIncompatible(format!(
                "checkpoint `{}` is a `{}`, group architecture is `{arch_id}`",
                ckpt.id,
                ckpt.architecture.id()
            )));
        }
        let mut model = factory.build(ckpt.seed);
        model
            .params_mut()
            .assign_by_name(&ckpt.params)
            .map_err(|e| Error::CheckpointIncompatible(format!("checkpoint `{}`: {e}", ckpt.id)))?;
        online.push(model);
    }
    let momentum = online.clone();
    Ok(GroupState {
        online,
        momentum,
        alpha,
        iteration: 1,
    })
}

/// `momentum <- alpha * momentum + (1 - alpha) * online`, element-wise, then
/// advances the iteration counter.
pub fn ema_update(state: &mut GroupState) {
    let alpha = state.alpha;
    for (m, o) in state.momentum.iter_mut().zip(&state.online) {
        for ((_, mt), (_, ot)) in m.params_mut().iter_mut().zip(o.params().iter()) {
            for (mv, &ov) in mt.data_mut().iter_mut().zip(ot.data()) {
                *mv = (alpha * *mv as f64 + (1.0 - alpha) * ov as f64) as f32;
            }
        }
    }
    state.iteration += 1;
}

/// Per-member forward passes stacked along a leading group axis.
#[derive(Clone, Debug)]
pub struct GroupOutputs {
    pub passes: Vec<ForwardPass>,
    /// H x B x F
    pub features: Array3<f64>,
    /// H x B x 2
    pub predictions: Array3<f64>,
}

pub fn group_forward(members: &[Box<dyn Backbone>], batch: &SampleBatch) -> Result<GroupOutputs> {
    if members.is_empty() {
        return Err(Error::invalid("group forward over zero members"));
    }
    if batch.batch_size() == 0 {
        return Err(Error::invalid("group forward over an empty batch"));
    }
    let arch = members[0].architecture();
    if members.iter().any(|m| m.architecture() != arch) {
        return Err(Error::invalid("group members do not share one architecture"));
    }
    let run = |m: &Box<dyn Backbone>| m.forward(&batch.images);
    let passes: Vec<ForwardPass> = if runtime::parallel() {
        members.par_iter().map(run).collect::<Result<_>>()?
    } else {
        members.iter().map(run).collect::<Result<_>>()?
    };
    let h = passes.len();
    let b = batch.batch_size();
    let f = passes[0].features().row_len();
    let features = Array3::from_shape_fn((h, b, f), |(k, i, j)| {
        passes[k].features().data()[i * f + j] as f64
    });
    let predictions = Array3::from_shape_fn((h, b, 2), |(k, i, j)| {
        passes[k].predictions().data()[i * 2 + j] as f64
    });
    Ok(GroupOutputs {
        passes,
        features,
        predictions,
    })
}

/// Standalone copy of the first online member.
pub fn extract_adapted(state: &GroupState) -> Box<dyn Backbone> {
    state.online[0].clone_box()
}

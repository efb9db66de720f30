use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{evaluate, DatasetHandle, EpochSampler};
use crate::error::{Error, Result};
use crate::gaze::SampleBatch;
use crate::losses::source_gaze_loss;
use crate::nn::{Backbone, BackboneFactory, ParamSet};
use crate::optim::{Adam, AdamConfig};
use crate::runtime;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub n_models: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            n_models: 10,
            steps: 2000,
            batch_size: 32,
            lr: 1e-4,
            seed: 0,
        }
    }
}

/// Seeds of the `n` models trained from one pretraining seed.
pub fn member_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

fn labels_tensor(batch: &SampleBatch) -> Result<Tensor> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("supervised step on a batch without labels"))?;
    let data = labels
        .iter()
        .flat_map(|l| [l.pitch as f32, l.yaw as f32])
        .collect();
    Tensor::from_vec(&[labels.len(), 2], data)
}

pub(crate) fn to_array2(t: &Tensor) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_fn((t.rows(), t.row_len()), |(i, j)| t.row(i)[j] as f64)
}

pub(crate) fn to_tensor(a: &ndarray::Array2<f64>) -> Tensor {
    let (r, c) = a.dim();
    Tensor::from_vec(&[r, c], a.iter().map(|&v| v as f32).collect()).expect("dims match")
}

/// L1 loss and parameter gradients of one model on a labelled batch.
pub fn supervised_grads(model: &dyn Backbone, batch: &SampleBatch) -> Result<(f64, ParamSet)> {
    let y = to_array2(&labels_tensor(batch)?);
    let pass = model.forward(&batch.images)?;
    let l = source_gaze_loss(to_array2(pass.predictions()).view(), y.view())?;
    let grads = model.backward(&pass, None, &to_tensor(&l.grad))?;
    Ok((l.value, grads))
}

fn train_one(
    factory: &dyn BackboneFactory,
    train: &DatasetHandle,
    val: &DatasetHandle,
    cfg: &PretrainConfig,
    index: usize,
    seed: u64,
) -> Result<Checkpoint> {
    let mut model = factory.build(seed);
    let mut adam = Adam::new(model.params(), AdamConfig::with_lr(cfg.lr));
    let mut sampler = EpochSampler::new((0..train.len()).collect(), seed ^ 0xb47c)?;
    for _ in 0..cfg.steps {
        let batch = train.batch(&sampler.next_batch(cfg.batch_size))?;
        let (_, grads) = supervised_grads(model.as_ref(), &batch)?;
        adam.step(model.params_mut(), &grads)?;
    }
    let mut ckpt = Checkpoint::from_model(format!("model_{index:02}"), model.as_ref(), seed);
    ckpt.source_val_error = Some(evaluate(model.as_ref(), val)?.mean);
    Ok(ckpt)
}

/// Trains `n_models` networks on labelled source data with the L1 gaze loss,
/// each from its own seed, and records their source-validation error.
pub fn pretrain(
    train: &DatasetHandle,
    val: &DatasetHandle,
    factory: &(dyn BackboneFactory + Sync),
    cfg: &PretrainConfig,
) -> Result<Vec<Checkpoint>> {
    if train.is_empty() || !train.is_labeled() || train.visibility() != crate::data::LabelVisibility::Visible {
        return Err(Error::invalid("pretraining needs visible source labels"));
    }
    if val.is_empty() || !val.is_labeled() {
        return Err(Error::invalid("pretraining needs a labelled validation split"));
    }
    if cfg.n_models == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("n_models and batch_size must be positive"));
    }
    let seeds = member_seeds(cfg.seed, cfg.n_models);
    let run = |(i, &s): (usize, &u64)| train_one(factory, train, val, cfg, i, s);
    if runtime::parallel() {
        seeds.par_iter().enumerate().map(run).collect()
    } else {
        seeds.iter().enumerate().map(run).collect()
    }
}

/// Checkpoints sorted by ascending source-validation error (ties by id).
pub fn rank_checkpoints(checkpoints: &[Checkpoint]) -> Result<Vec<Checkpoint>> {
    let mut ranked = checkpoints.to_vec();
    for c in &ranked {
        if c.source_val_error.is_none_or(|e| !e.is_finite()) {
            return Err(Error::invalid(format!(
                "checkpoint `{}` has no source validation error",
                c.id
            )));
        }
    }
    ranked.sort_by(|a, b| {
        a.source_val_error
            .partial_cmp(&b.source_val_error)
            .expect("finite errors")
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(ranked)
}

/// The `h` most accurate checkpoints, best first.
pub fn select_top(checkpoints: &[Checkpoint], h: usize) -> Result<Vec<Checkpoint>> {
    if h > checkpoints.len() {
        return Err(Error::Config(format!(
            "H = {h} but only {} checkpoints are available",
            checkpoints.len()
        )));
    }
    let mut ranked = rank_checkpoints(checkpoints)?;
    ranked.truncate(h);
    Ok(ranked)
}

pub const RANKING_HEADER: &str = "rank,id,seed,source_val_error";

pub fn format_ranking(ranked: &[Checkpoint]) -> String {
    let mut out = String::from(RANKING_HEADER);
    out.push('\n');
    for (i, c) in ranked.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            c.id,
            c.seed,
            c.source_val_error.unwrap_or(f64::NAN)
        ));
    }
    out
}

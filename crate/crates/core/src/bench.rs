//! Desk-scale domain-shift benchmark: pretrain on a synthetic source domain,
//! adapt to a synthetic target domain, compare against the source-only model.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{evaluate, generate_domain, DatasetHandle, SyntheticDomainSpec};
use crate::engine::{adapt, pretrain, select_top, AdaptConfig, AdaptOptions, PretrainConfig};
use crate::ensemble::init_group;
use crate::error::Result;
use crate::gaze::DomainTag;
use crate::nn::Architecture;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub source: SyntheticDomainSpec,
    pub target: SyntheticDomainSpec,
    /// Source images held out for checkpoint ranking.
    pub source_val: usize,
    pub architecture: Architecture,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let source = SyntheticDomainSpec::benchmark_source(2000, 0);
        let target = SyntheticDomainSpec::benchmark_target(500, 0);
        let architecture = Architecture::tiny_conv(source.channels(), source.height, source.width);
        BenchmarkConfig {
            source,
            target,
            source_val: 200,
            architecture,
            pretrain: PretrainConfig {
                n_models: 4,
                steps: 1500,
                batch_size: 32,
                lr: 1e-3,
                seed: 0,
            },
            adapt: AdaptConfig {
                h: 3,
                ..AdaptConfig::default()
            },
        }
    }
}

/// Domains rendered for one seed.
#[derive(Clone, Debug)]
pub struct BenchmarkData {
    pub source_train: DatasetHandle,
    pub source_val: DatasetHandle,
    /// Labels visible; the engine only ever sees a hidden view.
    pub target: DatasetHandle,
}

impl BenchmarkConfig {
    /// Renders source and target data; `seed` varies labels, gains and noise
    /// but not the domain textures.
    pub fn data(&self, seed: u64) -> Result<BenchmarkData> {
        let mut src = self.source.clone();
        src.n_images += self.source_val;
        src.seed = self.source.seed.wrapping_add(seed.wrapping_mul(2).wrapping_add(1));
        let mut tgt = self.target.clone();
        tgt.seed = self.target.seed.wrapping_add(seed.wrapping_mul(2).wrapping_add(2));
        let all = generate_domain(&src, DomainTag::Source)?;
        let n_train = self.source.n_images;
        Ok(BenchmarkData {
            source_train: all.select(&(0..n_train).collect::<Vec<_>>())?,
            source_val: all.select(&(n_train..all.len()).collect::<Vec<_>>())?,
            target: generate_domain(&tgt, DomainTag::Target)?,
        })
    }

    pub fn pretrain(&self, data: &BenchmarkData, seed: u64) -> Result<Vec<Checkpoint>> {
        let cfg = PretrainConfig {
            seed: self.pretrain.seed.wrapping_add(seed),
            ..self.pretrain.clone()
        };
        pretrain(&data.source_train, &data.source_val, &self.architecture, &cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Target error of the top-ranked pretrained model.
    pub baseline: f64,
    /// Target error of member 1 after adaptation.
    pub adapted: f64,
    pub target_images_read: usize,
    pub target_label_accesses: usize,
}

/// Adapts the top-H of `checkpoints` with `cfg` and evaluates on the target.
pub fn adapt_and_score(
    bench: &BenchmarkConfig,
    data: &BenchmarkData,
    checkpoints: &[Checkpoint],
    cfg: &AdaptConfig,
    seed: u64,
) -> Result<SeedOutcome> {
    let group = select_top(checkpoints, cfg.h)?;
    let baseline_model = group[0].instantiate()?;
    let baseline = evaluate(baseline_model.as_ref(), &data.target)?.mean;
    let state = init_group(&group, &bench.architecture, cfg.alpha)?;
    let hidden = data.target.hidden();
    let cfg = AdaptConfig {
        seed,
        ..cfg.clone()
    };
    let opts = AdaptOptions {
        checkpoint_ids: group.iter().map(|c| c.id.clone()).collect(),
        ..Default::default()
    };
    let out = adapt(state, &data.source_train, &hidden, &cfg, &opts)?;
    let adapted = evaluate(out.state.online()[0].as_ref(), &data.target)?.mean;
    Ok(SeedOutcome {
        seed,
        baseline,
        adapted,
        target_images_read: hidden.access_count(),
        target_label_accesses: hidden.label_access_count(),
    })
}

/// Full pipeline for one seed with the benchmark's own adaptation config.
pub fn run_seed(bench: &BenchmarkConfig, seed: u64) -> Result<SeedOutcome> {
    let data = bench.data(seed)?;
    let ckpts = bench.pretrain(&data, seed)?;
    adapt_and_score(bench, &data, &ckpts, &bench.adapt, seed)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use gazeadapt::bench::BenchmarkConfig;
use gazeadapt::data::{
    generate_domain, ingest_directory, ingest_unlabeled, DatasetHandle, SyntheticDomainSpec,
};
use gazeadapt::engine::{Ablation, AdaptConfig, PretrainConfig};
use gazeadapt::losses::{DeviationLoss, OgLossParams};
use gazeadapt::nn::Architecture;
use gazeadapt::{DomainTag, Error, Result};
use serde::{Deserialize, Serialize};

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        spec: SyntheticDomainSpec,
    },
    /// PNG directory. Without a label file every `*.png` is read unlabeled.
    Directory {
        root: PathBuf,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

impl DataSource {
    pub fn load(&self, domain: DomainTag) -> Result<DatasetHandle> {
        match self {
            DataSource::Synthetic { spec } => generate_domain(spec, domain),
            DataSource::Directory { root, labels } => match labels {
                Some(l) => ingest_directory(root, &root.join(l), domain),
                None => ingest_unlabeled(root, domain),
            },
        }
    }

    /// Image shape as (channels, height, width), when known without loading.
    fn synthetic_shape(&self) -> Option<(usize, usize, usize)> {
        match self {
            DataSource::Synthetic { spec } => Some((spec.channels(), spec.height, spec.width)),
            DataSource::Directory { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossCurveConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub n_points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for LossCurveConfig {
    fn default() -> Self {
        LossCurveConfig {
            epsilon: 0.05,
            gamma: 0.01,
            n_points: 801,
            lo: -4.0,
            hi: 4.0,
        }
    }
}

impl LossCurveConfig {
    pub fn params(&self) -> Result<OgLossParams> {
        OgLossParams::new(self.gamma, self.epsilon)
    }
}

/// One row of an ablation grid: a name plus overrides of the base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default)]
    pub ablation: Option<String>,
    #[serde(default)]
    pub og_variant: Option<DeviationLoss>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default)]
    pub lambda2: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default, rename = "N")]
    pub n: Option<usize>,
}

impl VariantSpec {
    pub fn apply(&self, base: &AdaptConfig) -> Result<AdaptConfig> {
        let mut c = base.clone();
        if let Some(a) = &self.ablation {
            c.ablation = Ablation::parse(a)?;
        }
        if let Some(v) = self.og_variant {
            c.og_variant = v;
        }
        c.epsilon = self.epsilon.unwrap_or(c.epsilon);
        c.gamma = self.gamma.unwrap_or(c.gamma);
        c.lambda1 = self.lambda1.unwrap_or(c.lambda1);
        c.lambda2 = self.lambda2.unwrap_or(c.lambda2);
        c.alpha = self.alpha.unwrap_or(c.alpha);
        c.n = self.n.unwrap_or(c.n);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSpec>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            seeds: vec![0],
            variants: vec![VariantSpec {
                name: "2oma+js+sg".into(),
                ablation: None,
                og_variant: None,
                epsilon: None,
                gamma: None,
                lambda1: None,
                lambda2: None,
                alpha: None,
                n: None,
            }],
        }
    }
}

/// Everything a command needs. Absent keys take defaults; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub out_dir: Option<PathBuf>,
    /// Directory of pretrained checkpoints; defaults to `<out>/checkpoints`.
    pub checkpoints: Option<PathBuf>,
    pub architecture: Option<Architecture>,
    pub source: DataSource,
    /// Trailing source images held out for checkpoint ranking.
    pub source_val: usize,
    /// Unlabeled during adaptation; its labels are used only for scoring.
    pub target: DataSource,
    /// Labelled data for `eval` and adaptation scoring; defaults to `target`.
    pub eval: Option<DataSource>,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
    pub ablate: AblateConfig,
    pub losscurve: LossCurveConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        let bench = BenchmarkConfig::default();
        CliConfig {
            out_dir: None,
            checkpoints: None,
            architecture: None,
            source: DataSource::Synthetic {
                spec: SyntheticDomainSpec {
                    n_images: bench.source.n_images + bench.source_val,
                    ..bench.source
                },
            },
            source_val: bench.source_val,
            target: DataSource::Synthetic { spec: bench.target },
            eval: None,
            pretrain: PretrainConfig::default(),
            adapt: AdaptConfig::default(),
            ablate: AblateConfig::default(),
            losscurve: LossCurveConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: CliConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim())))?;
        Ok(cfg)
    }

    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.pretrain.seed = s;
            self.adapt.seed = s;
        }
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| Error::Config("no output directory: pass --out or set out_dir".into()))
    }

    pub fn checkpoint_dir(&self, out: Option<&Path>) -> Result<PathBuf> {
        match &self.checkpoints {
            Some(p) => Ok(p.clone()),
            None => Ok(self.out_dir(out)?.join("checkpoints")),
        }
    }

    /// Explicit architecture, or a tiny convolutional net sized to the data.
    pub fn architecture(&self, sample: Option<&DatasetHandle>) -> Result<Architecture> {
        if let Some(a) = &self.architecture {
            return Ok(a.clone());
        }
        let shape = match (self.source.synthetic_shape(), sample) {
            (Some(s), _) => s,
            (None, Some(h)) if !h.is_empty() => {
                let s = h.image(0)?.shape().to_vec();
                (s[0], s[1], s[2])
            }
            _ => {
                return Err(Error::Config(
                    "cannot infer the architecture input shape; set [architecture]".into(),
                ))
            }
        };
        Ok(Architecture::tiny_conv(shape.0, shape.1, shape.2))
    }

    /// Source training and validation splits.
    pub fn source_splits(&self) -> Result<(DatasetHandle, DatasetHandle)> {
        let all = self.source.load(DomainTag::Source)?;
        if self.source_val == 0 || self.source_val >= all.len() {
            return Err(Error::Config(format!(
                "source_val = {} must lie in 1..{}",
                self.source_val,
                all.len()
            )));
        }
        let cut = all.len() - self.source_val;
        Ok((
            all.select(&(0..cut).collect::<Vec<_>>())?,
            all.select(&(cut..all.len()).collect::<Vec<_>>())?,
        ))
    }

    pub fn eval_data(&self) -> Result<DatasetHandle> {
        self.eval.as_ref().unwrap_or(&self.target).load(DomainTag::Target)
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

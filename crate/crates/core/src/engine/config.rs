use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DeviationLoss, LossWeights, OgLossParams};
use crate::optim::AdamConfig;

/// Optional loss components of the adaptation objective.
///
/// * `oma`: outlier guidance of the online group against momentum-group
///   statistics.
/// * `2oma`: additionally scores each online member against the online
///   group's own statistics (second distribution). Implies `oma`.
/// * `js`: feature alignment between each online member and its momentum twin.
/// * `sg`: supervised L1 anchor on labelled source batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationFlag {
    #[serde(rename = "oma")]
    Oma,
    #[serde(rename = "2oma")]
    TwoOma,
    #[serde(rename = "js")]
    Js,
    #[serde(rename = "sg")]
    Sg,
}

impl AblationFlag {
    pub fn name(self) -> &'static str {
        match self {
            AblationFlag::Oma => "oma",
            AblationFlag::TwoOma => "2oma",
            AblationFlag::Js => "js",
            AblationFlag::Sg => "sg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oma" => Ok(AblationFlag::Oma),
            "2oma" => Ok(AblationFlag::TwoOma),
            "js" => Ok(AblationFlag::Js),
            "sg" => Ok(AblationFlag::Sg),
            other => Err(Error::invalid(format!("unknown ablation flag `{other}`"))),
        }
    }
}

/// Enabled components. The full method is `{2oma, js, sg}`.
/// Serialized as its label, e.g. `"2oma+js+sg"`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ablation(BTreeSet<AblationFlag>);

impl TryFrom<String> for Ablation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Ablation::parse(&s)
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        a.label()
    }
}

impl Ablation {
    pub fn new(flags: impl IntoIterator<Item = AblationFlag>) -> Self {
        Ablation(flags.into_iter().collect())
    }

    pub fn full() -> Self {
        Self::new([AblationFlag::TwoOma, AblationFlag::Js, AblationFlag::Sg])
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Parses `"2oma+js+sg"`; an empty string or `"none"` means no flags.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::none());
        }
        s.split('+').map(|f| AblationFlag::parse(f.trim())).collect::<Result<_>>().map(Ablation)
    }

    pub fn contains(&self, flag: AblationFlag) -> bool {
        self.0.contains(&flag)
    }

    /// Outlier guidance against momentum statistics is active.
    pub fn oma(&self) -> bool {
        self.contains(AblationFlag::Oma) || self.two_oma()
    }

    pub fn two_oma(&self) -> bool {
        self.contains(AblationFlag::TwoOma)
    }

    pub fn js(&self) -> bool {
        self.contains(AblationFlag::Js)
    }

    pub fn sg(&self) -> bool {
        self.contains(AblationFlag::Sg)
    }

    pub fn label(&self) -> String {
        if self.0.is_empty() {
            return "none".into();
        }
        self.0.iter().map(|f| f.name()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    #[serde(rename = "H")]
    pub h: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub batch_size_source: usize,
    pub batch_size_target: usize,
    pub lr_pretrain: f64,
    pub lr_adapt: f64,
    pub target_budget: usize,
    /// Labelled source images available during adaptation.
    pub source_subset: usize,
    pub ablation: Ablation,
    pub og_variant: DeviationLoss,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            h: 10,
            alpha: 0.99,
            epsilon: 0.05,
            gamma: 0.01,
            lambda1: 0.01,
            lambda2: 0.1,
            n: 500,
            batch_size_source: 8,
            batch_size_target: 8,
            lr_pretrain: 1e-4,
            lr_adapt: 1e-4,
            target_budget: 10,
            source_subset: 100,
            ablation: Ablation::full(),
            og_variant: DeviationLoss::Og,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h < 2 {
            return Err(Error::invalid(format!("H must be >= 2, got {}", self.h)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.batch_size_source == 0 || self.batch_size_target == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if self.target_budget == 0 {
            return Err(Error::invalid("target_budget must be positive"));
        }
        if self.source_subset == 0 {
            return Err(Error::invalid("source_subset must be positive"));
        }
        for (name, lr) in [("lr_pretrain", self.lr_pretrain), ("lr_adapt", self.lr_adapt)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0, got {lr}")));
            }
        }
        self.og_params()?;
        self.weights()?;
        Ok(())
    }

    pub fn og_params(&self) -> Result<OgLossParams> {
        OgLossParams::new(self.gamma, self.epsilon)
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda1, self.lambda2)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr_adapt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = AdaptConfig::default();
        assert_eq!((c.h, c.n, c.target_budget), (10, 500, 10));
        assert_eq!((c.alpha, c.epsilon, c.gamma), (0.99, 0.05, 0.01));
        assert_eq!((c.lambda1, c.lambda2), (0.01, 0.1));
        assert_eq!((c.lr_pretrain, c.lr_adapt), (1e-4, 1e-4));
        assert!(c.batch_size_target <= c.target_budget);
        c.validate().unwrap();
    }

    #[test]
    fn ablation_parsing() {
        let a = Ablation::parse("2oma+js+sg").unwrap();
        assert_eq!(a, Ablation::full());
        assert!(a.oma() && a.two_oma());
        assert_eq!(a.label(), "2oma+js+sg");
        assert_eq!(Ablation::parse("none").unwrap(), Ablation::none());
        assert!(Ablation::parse("oma+xx").is_err());
        let only = Ablation::parse("oma").unwrap();
        assert!(only.oma() && !only.two_oma() && !only.sg());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#""2oma+js+sg""#);
        assert_eq!(serde_json::from_str::<Ablation>(&json).unwrap(), a);
        assert!(serde_json::from_str::<Ablation>(r#""oma+xx""#).is_err());
    }
}

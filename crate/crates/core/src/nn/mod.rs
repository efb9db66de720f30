//! Backbone plug-in contract and the bundled reference backbones.
//!
//! A backbone is a feature extractor followed by a regression head. The
//! adaptation engine only talks to [`Backbone`], so any model that can run a
//! forward pass and backpropagate gradients on its features and predictions
//! can be plugged in.

mod layers;
mod network;
mod params;
mod probe;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use layers::ConvGeometry;
pub use network::Network;
pub use params::ParamSet;
pub use probe::LabelProbe;

use crate::error::{Error, Result};
use crate::gaze::GazeLabel;
use crate::tensor::Tensor;

/// Layer inputs recorded during a forward pass, consumed by backward.
#[derive(Clone, Debug)]
pub struct Activations {
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) output: Tensor,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

/// Result of running the extractor and head on a batch.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub features: Activations,
    pub head: Activations,
}

impl ForwardPass {
    /// B x F feature matrix.
    pub fn features(&self) -> &Tensor {
        self.features.output()
    }

    /// B x 2 (pitch, yaw) predictions.
    pub fn predictions(&self) -> &Tensor {
        self.head.output()
    }
}

/// The plug-in contract: `predict = predict_head . extract_features`.
pub trait Backbone: Send + Sync + fmt::Debug {
    fn architecture(&self) -> &Architecture;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Images (B x C x H x W) to features (B x F).
    fn extract_features(&self, images: &Tensor) -> Result<Activations>;

    /// Features (B x F) to gaze predictions (B x 2).
    fn predict_head(&self, features: &Tensor) -> Result<Activations>;

    /// Parameter gradients given upstream gradients on the predictions and,
    /// optionally, on the features.
    fn backward(
        &self,
        pass: &ForwardPass,
        grad_features: Option<&Tensor>,
        grad_predictions: &Tensor,
    ) -> Result<ParamSet>;

    fn clone_box(&self) -> Box<dyn Backbone>;

    fn forward(&self, images: &Tensor) -> Result<ForwardPass> {
        let features = self.extract_features(images)?;
        let head = self.predict_head(features.output())?;
        Ok(ForwardPass { features, head })
    }

    /// Predictions only, as gaze labels.
    fn predict(&self, images: &Tensor) -> Result<Vec<GazeLabel>> {
        let pass = self.forward(images)?;
        Ok(predictions_to_labels(pass.predictions()))
    }
}

impl Clone for Box<dyn Backbone> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub fn predictions_to_labels(pred: &Tensor) -> Vec<GazeLabel> {
    (0..pred.rows())
        .map(|i| {
            let r = pred.row(i);
            GazeLabel::prediction(r[0] as f64, r[1] as f64)
        })
        .collect()
}

/// Builds fresh backbone instances of one architecture.
pub trait BackboneFactory {
    fn architecture_id(&self) -> String;
    fn build(&self, seed: u64) -> Box<dyn Backbone>;
}

/// Serializable description of a reference architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Two strided 3x3 convolutions, a dense feature layer, a two-layer head.
    TinyConv {
        channels: usize,
        height: usize,
        width: usize,
        conv1: usize,
        conv2: usize,
        feature_dim: usize,
        hidden: usize,
    },
    /// Dense extractor with one hidden layer, two-layer head.
    Mlp {
        channels: usize,
        height: usize,
        width: usize,
        hidden: usize,
        feature_dim: usize,
    },
    /// Parameter-free self-test model that decodes labels embedded in the
    /// last image channel (see `SyntheticDomainSpec::label_channel`).
    LabelProbe {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Architecture {
    pub fn tiny_conv(channels: usize, height: usize, width: usize) -> Self {
        Architecture::TinyConv {
            channels,
            height,
            width,
            conv1: 8,
            conv2: 16,
            feature_dim: 32,
            hidden: 32,
        }
    }

    pub fn mlp(channels: usize, height: usize, width: usize) -> Self {
        Architecture::Mlp {
            channels,
            height,
            width,
            hidden: 64,
            feature_dim: 32,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Architecture::TinyConv { .. } => "tiny_conv",
            Architecture::Mlp { .. } => "mlp",
            Architecture::LabelProbe { .. } => "label_probe",
        }
    }

    /// Expected (C, H, W) of one image.
    pub fn input_shape(&self) -> [usize; 3] {
        match *self {
            Architecture::TinyConv {
                channels,
                height,
                width,
                ..
            }
            | Architecture::Mlp {
                channels,
                height,
                width,
                ..
            }
            | Architecture::LabelProbe {
                channels,
                height,
                width,
            } => [channels, height, width],
        }
    }

    pub fn check_images(&self, images: &Tensor) -> Result<()> {
        let s = images.shape();
        let want = self.input_shape();
        if s.len() != 4 || s[1..] != want || s[0] == 0 {
            return Err(Error::invalid(format!(
                "{} expects B x {} x {} x {} images, got {:?}",
                self.id(),
                want[0],
                want[1],
                want[2],
                s
            )));
        }
        Ok(())
    }

    pub fn build(&self, seed: u64) -> Box<dyn Backbone> {
        match self {
            Architecture::LabelProbe { .. } => Box::new(LabelProbe::new(self.clone())),
            _ => Box::new(Network::new(self.clone(), seed)),
        }
    }
}

impl BackboneFactory for Architecture {
    fn architecture_id(&self) -> String {
        self.id().to_string()
    }

    fn build(&self, seed: u64) -> Box<dyn Backbone> {
        Architecture::build(self, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_shape_contract() {
        let arch = Architecture::tiny_conv(1, 12, 20);
        assert!(arch.check_images(&Tensor::zeros(&[2, 1, 12, 20])).is_ok());
        assert!(arch.check_images(&Tensor::zeros(&[2, 3, 12, 20])).is_err());
        assert!(arch.check_images(&Tensor::zeros(&[0, 1, 12, 20])).is_err());
        let net = arch.build(0);
        assert!(matches!(
            net.forward(&Tensor::zeros(&[1, 1, 10, 20])),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn architecture_round_trips_through_json() {
        let arch = Architecture::mlp(1, 8, 8);
        let s = serde_json::to_string(&arch).unwrap();
        assert!(s.contains("\"kind\":\"mlp\""));
        assert_eq!(serde_json::from_str::<Architecture>(&s).unwrap(), arch);
    }
}

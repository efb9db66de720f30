use std::f32::consts::PI;

use super::{Activations, Architecture, Backbone, ForwardPass, ParamSet};
use crate::error::Result;
use crate::tensor::Tensor;

/// Decodes `pitch = (v0 - 0.5) * pi` and `yaw = (v1 - 0.5) * 2 pi` from the
/// first two pixels of the last channel. It has no parameters and exists so
/// the evaluation path can be checked end to end against an exact model.
#[derive(Clone, Debug)]
pub struct LabelProbe {
    arch: Architecture,
    params: ParamSet,
}

impl LabelProbe {
    pub fn new(arch: Architecture) -> Self {
        LabelProbe {
            arch,
            params: ParamSet::new(),
        }
    }
}

impl Backbone for LabelProbe {
    fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn extract_features(&self, images: &Tensor) -> Result<Activations> {
        self.arch.check_images(images)?;
        let [c, h, w] = self.arch.input_shape();
        let plane = h * w;
        let b = images.rows();
        let mut data = Vec::with_capacity(2 * b);
        for i in 0..b {
            let last = &images.row(i)[(c - 1) * plane..];
            data.push(last[0]);
            data.push(last[1]);
        }
        Ok(Activations {
            inputs: Vec::new(),
            output: Tensor::from_vec(&[b, 2], data)?,
        })
    }

    fn predict_head(&self, features: &Tensor) -> Result<Activations> {
        let mut out = features.clone();
        for pair in out.data_mut().chunks_mut(2) {
            pair[0] = (pair[0] - 0.5) * PI;
            pair[1] = (pair[1] - 0.5) * 2.0 * PI;
        }
        Ok(Activations {
            inputs: Vec::new(),
            output: out,
        })
    }

    fn backward(&self, _: &ForwardPass, _: Option<&Tensor>, _: &Tensor) -> Result<ParamSet> {
        Ok(ParamSet::new())
    }

    fn clone_box(&self) -> Box<dyn Backbone> {
        Box::new(self.clone())
    }
}

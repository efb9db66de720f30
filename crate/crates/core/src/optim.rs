use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = |p: &ParamSet| p.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            config,
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_compatible(grads)?;
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, ((_, p), (_, g))) in params.iter_mut().zip(grads.iter()).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gv = gv as f64;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *pv = (*pv as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap());
        let mut g = p.zeros_like();
        g.at_mut(0).data_mut().copy_from_slice(&[2.0, -0.5, 0.0]);
        let mut adam = Adam::new(&p, AdamConfig::with_lr(0.1));
        adam.step(&mut p, &g).unwrap();
        let d = p.at(0).data();
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] - 1.1).abs() < 1e-6);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamSet::new();
        p.push("x", Tensor::from_vec(&[1], vec![3.0]).unwrap());
        let mut adam = Adam::new(&p, AdamConfig::with_lr(0.05));
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            g.at_mut(0).data_mut()[0] = 2.0 * (p.at(0).data()[0] - 1.0);
            adam.step(&mut p, &g).unwrap();
        }
        assert!((p.at(0).data()[0] - 1.0).abs() < 1e-2);
    }
}

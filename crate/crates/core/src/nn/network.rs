use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use super::layers::{
    conv2d_backward, conv2d_forward, linear_backward, linear_forward, relu_backward,
    relu_forward, ConvGeometry,
};
use super::{Activations, Architecture, Backbone, ForwardPass, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
enum Layer {
    Conv {
        weight: usize,
        bias: usize,
        geometry: ConvGeometry,
    },
    Linear {
        weight: usize,
        bias: usize,
    },
    Relu,
    Flatten,
}

/// Layer-stack implementation of the `TinyConv` and `Mlp` architectures.
#[derive(Clone, Debug)]
pub struct Network {
    arch: Architecture,
    params: ParamSet,
    extractor: Vec<Layer>,
    head: Vec<Layer>,
}

const STRIDE2: ConvGeometry = ConvGeometry { stride: 2, pad: 1 };

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| u.sample(rng)).collect()).expect("shape matches")
}

fn strided(size: usize) -> usize {
    (size + 2 * STRIDE2.pad - 3) / STRIDE2.stride + 1
}

impl Network {
    /// Freshly initialized network; the seed fully determines the weights.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let linear = |params: &mut ParamSet, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng| {
            let weight = params.push(format!("{name}.weight"), he_uniform(&[out, inp], inp, rng));
            let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[out]));
            Layer::Linear { weight, bias }
        };
        let (extractor, head) = match arch {
            Architecture::TinyConv {
                channels,
                height,
                width,
                conv1,
                conv2,
                feature_dim,
                hidden,
            } => {
                let mut conv = |params: &mut ParamSet, name: &str, cin: usize, cout: usize| {
                    let weight = params.push(
                        format!("{name}.weight"),
                        he_uniform(&[cout, cin, 3, 3], cin * 9, &mut rng),
                    );
                    let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
                    Layer::Conv {
                        weight,
                        bias,
                        geometry: STRIDE2,
                    }
                };
                let c1 = conv(&mut params, "conv1", channels, conv1);
                let c2 = conv(&mut params, "conv2", conv1, conv2);
                let flat = conv2 * strided(strided(height)) * strided(strided(width));
                let fc = linear(&mut params, "fc", flat, feature_dim, &mut rng);
                let h1 = linear(&mut params, "head1", feature_dim, hidden, &mut rng);
                let h2 = linear(&mut params, "head2", hidden, 2, &mut rng);
                (
                    vec![c1, Layer::Relu, c2, Layer::Relu, Layer::Flatten, fc, Layer::Relu],
                    vec![h1, Layer::Relu, h2],
                )
            }
            Architecture::Mlp {
                channels,
                height,
                width,
                hidden,
                feature_dim,
            } => {
                let flat = channels * height * width;
                let l1 = linear(&mut params, "fc1", flat, hidden, &mut rng);
                let l2 = linear(&mut params, "fc2", hidden, feature_dim, &mut rng);
                let h1 = linear(&mut params, "head1", feature_dim, hidden, &mut rng);
                let h2 = linear(&mut params, "head2", hidden, 2, &mut rng);
                (
                    vec![Layer::Flatten, l1, Layer::Relu, l2, Layer::Relu],
                    vec![h1, Layer::Relu, h2],
                )
            }
            Architecture::LabelProbe { .. } => {
                panic!("label probe has no layer stack; use Architecture::build")
            }
        };
        // Scale the output layer down so fresh networks predict near zero.
        if let Some(Layer::Linear { weight, .. }) = head.last() {
            for v in params.at_mut(*weight).data_mut() {
                *v *= 0.1;
            }
        }
        Network {
            arch,
            params,
            extractor,
            head,
        }
    }

    fn run(&self, layers: &[Layer], input: &Tensor) -> Result<Activations> {
        let mut inputs = Vec::with_capacity(layers.len());
        let mut x = input.clone();
        for layer in layers {
            let y = match *layer {
                Layer::Conv {
                    weight,
                    bias,
                    geometry,
                } => conv2d_forward(&x, self.params.at(weight), self.params.at(bias), geometry)?,
                Layer::Linear { weight, bias } => {
                    linear_forward(&x, self.params.at(weight), self.params.at(bias))?
                }
                Layer::Relu => relu_forward(&x),
                Layer::Flatten => {
                    let (b, n) = (x.rows(), x.row_len());
                    x.clone().reshape(&[b, n])?
                }
            };
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok(Activations { inputs, output: x })
    }

    /// Backpropagates `grad` through `layers`, accumulating into `grads`.
    fn back(
        &self,
        layers: &[Layer],
        acts: &Activations,
        mut grad: Tensor,
        grads: &mut ParamSet,
        need_input_grad: bool,
    ) -> Tensor {
        for (i, layer) in layers.iter().enumerate().rev() {
            let x = &acts.inputs[i];
            let first = i == 0;
            grad = match *layer {
                Layer::Conv {
                    weight,
                    bias,
                    geometry,
                } => {
                    let (gx, gw, gb) = conv2d_backward(x, self.params.at(weight), &grad, geometry);
                    accumulate(grads.at_mut(weight), &gw);
                    accumulate(grads.at_mut(bias), &gb);
                    gx
                }
                Layer::Linear { weight, bias } => {
                    let (gx, gw, gb) = linear_backward(x, self.params.at(weight), &grad);
                    accumulate(grads.at_mut(weight), &gw);
                    accumulate(grads.at_mut(bias), &gb);
                    gx
                }
                Layer::Relu => relu_backward(x, &grad),
                Layer::Flatten => grad.reshape(x.shape()).expect("flatten preserves size"),
            };
            if first && !need_input_grad {
                break;
            }
        }
        grad
    }
}

fn accumulate(dst: &mut Tensor, src: &Tensor) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

impl Backbone for Network {
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
        self.run(&self.extractor, images)
    }

    fn predict_head(&self, features: &Tensor) -> Result<Activations> {
        self.run(&self.head, features)
    }

    fn backward(
        &self,
        pass: &ForwardPass,
        grad_features: Option<&Tensor>,
        grad_predictions: &Tensor,
    ) -> Result<ParamSet> {
        if grad_predictions.shape() != pass.predictions().shape() {
            return Err(Error::shape(format!(
                "prediction gradient {:?} vs predictions {:?}",
                grad_predictions.shape(),
                pass.predictions().shape()
            )));
        }
        let mut grads = self.params.zeros_like();
        let mut gz = self.back(&self.head, &pass.head, grad_predictions.clone(), &mut grads, true);
        if let Some(extra) = grad_features {
            if extra.shape() != gz.shape() {
                return Err(Error::shape(format!(
                    "feature gradient {:?} vs features {:?}",
                    extra.shape(),
                    gz.shape()
                )));
            }
            accumulate(&mut gz, extra);
        }
        self.back(&self.extractor, &pass.features, gz, &mut grads, false);
        Ok(grads)
    }

    fn clone_box(&self) -> Box<dyn Backbone> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Uniform;

    fn images(b: usize, arch: &Architecture, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(0.0f32, 1.0).unwrap();
        let [c, h, w] = arch.input_shape();
        Tensor::from_vec(&[b, c, h, w], (0..b * c * h * w).map(|_| u.sample(&mut rng)).collect())
            .unwrap()
    }

    /// Objective `sum(pred * a) + sum(feat * c)` and its analytic gradient.
    fn objective(net: &Network, x: &Tensor, a: &Tensor, c: &Tensor) -> f64 {
        let pass = net.forward(x).unwrap();
        let dot = |p: &Tensor, q: &Tensor| -> f64 {
            p.data().iter().zip(q.data()).map(|(u, v)| *u as f64 * *v as f64).sum()
        };
        dot(pass.predictions(), a) + dot(pass.features(), c)
    }

    #[test]
    fn head_composes_with_extractor() {
        for arch in [Architecture::tiny_conv(1, 12, 20), Architecture::mlp(1, 6, 8)] {
            let net = Network::new(arch.clone(), 3);
            let x = images(4, &arch, 1);
            let full = net.forward(&x).unwrap();
            let z = net.extract_features(&x).unwrap();
            let g = net.predict_head(z.output()).unwrap();
            assert_eq!(full.predictions(), g.output());
            assert_eq!(full.predictions().shape(), &[4, 2]);
        }
    }

    #[test]
    fn stable_names_and_seeded_init() {
        let arch = Architecture::tiny_conv(1, 12, 20);
        let a = Network::new(arch.clone(), 1);
        let b = Network::new(arch.clone(), 2);
        a.params.check_compatible(&b.params).unwrap();
        assert_ne!(a.params, b.params);
        assert_eq!(a.params, Network::new(arch, 1).params);
        let names: Vec<_> = a.params.names().collect();
        assert_eq!(names[0], "conv1.weight");
        assert_eq!(*names.last().unwrap(), "head2.bias");
    }

    #[test]
    fn backward_matches_finite_differences() {
        for arch in [Architecture::tiny_conv(1, 10, 12), Architecture::mlp(1, 5, 6)] {
            let net = Network::new(arch.clone(), 7);
            let x = images(3, &arch, 2);
            let pass = net.forward(&x).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let u = Uniform::new(-1.0f32, 1.0).unwrap();
            let a = Tensor::from_vec(&[3, 2], (0..6).map(|_| u.sample(&mut rng)).collect()).unwrap();
            let f = pass.features().numel();
            let c = Tensor::from_vec(pass.features().shape(), (0..f).map(|_| u.sample(&mut rng)).collect())
                .unwrap();
            let grads = net.backward(&pass, Some(&c), &a).unwrap();
            let fd_at = |pi: usize, idx: usize, h: f32| {
                let mut plus = net.clone();
                plus.params.at_mut(pi).data_mut()[idx] += h;
                let mut minus = net.clone();
                minus.params.at_mut(pi).data_mut()[idx] -= h;
                (objective(&plus, &x, &a, &c) - objective(&minus, &x, &a, &c)) / (2.0 * h as f64)
            };
            let mut checked = 0;
            for (pi, (name, t)) in net.params.iter().enumerate() {
                for idx in [0, t.numel() / 2, t.numel() - 1] {
                    let (f1, f2) = (fd_at(pi, idx, 1e-3), fd_at(pi, idx, 5e-4));
                    // Two step sizes disagreeing means a ReLU kink sits inside the stencil.
                    if (f1 - f2).abs() > 1e-3 + 1e-2 * f1.abs() {
                        continue;
                    }
                    checked += 1;
                    let an = grads.at(pi).data()[idx] as f64;
                    assert!(
                        (f1 - an).abs() < 2e-3 + 2e-2 * an.abs(),
                        "{name}[{idx}]: fd {f1} vs analytic {an}"
                    );
                }
            }
            assert!(checked * 4 >= 3 * 3 * net.params.len(), "too many kinks: {checked}");
        }
    }
}

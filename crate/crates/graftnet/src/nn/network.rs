//! The network: an owned layer stack with explicit forward / backward and
//! a named view of its parameters.
//!
//! `forward` caches per-layer activations for a later `backward`; `infer`
//! is the pure read-only pass used for evaluation and for teacher outputs.
//! Parameter names follow `layer{i}.weight` / `layer{i}.bias` where `i` is
//! the layer's position in the architecture, so two networks built from the
//! same architecture expose identical ordered name lists.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward, ArchitectureSpec, ConvLayer, DenseLayer, Layer,
    LayerSpec,
};
use crate::params::NamedTensors;
use crate::rng::rng_from;
use crate::tensor::Tensor;

/// One conv layer's filter bank, detached from the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerWeights {
    /// Position of the layer in the architecture (the `i` in `layer{i}`).
    pub layer_index: usize,
    /// `[filters, channels, k, k]`.
    pub weights: Tensor,
}

impl ConvLayerWeights {
    pub fn new(layer_index: usize, weights: Tensor) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::Shape {
                context: "ConvLayerWeights::new".into(),
                expected: "rank-4 [filters, channels, k, k]".into(),
                actual: format!("{:?}", weights.shape()),
            });
        }
        Ok(ConvLayerWeights {
            layer_index,
            weights,
        })
    }

    pub fn name(&self) -> String {
        format!("layer{}.weight", self.layer_index)
    }

    pub fn num_filters(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Flat view of filter `f`.
    pub fn filter(&self, f: usize) -> &[f64] {
        self.weights.outer_slice(f)
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Conv { input: Tensor },
    Relu { mask: Vec<bool> },
    MaxPool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
    Dense { input: Tensor },
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: [usize; 3],
    classes: usize,
    cache: Option<Vec<LayerCache>>,
}

impl Network {
    /// Builds and initializes a network. Conv and dense weights draw from
    /// a seeded normal scaled by sqrt(2 / fan_in); biases start at zero.
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Network> {
        let shapes = spec.feature_shapes()?;
        let mut rng = rng_from(seed);
        let mut gaussian =
            |n: usize, std: f64| -> Vec<f64> {
                (0..n)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        z * std
                    })
                    .collect()
            };

        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut in_shape = vec![
            spec.input.channels,
            spec.input.height,
            spec.input.width,
        ];
        for (i, layer) in spec.layers.iter().enumerate() {
            let built = match *layer {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    padding,
                } => {
                    let channels = in_shape[0];
                    let fan_in = channels * kernel * kernel;
                    let std = (2.0 / fan_in as f64).sqrt();
                    Layer::Conv(ConvLayer {
                        weight: Tensor::new(
                            vec![filters, channels, kernel, kernel],
                            gaussian(filters * fan_in, std),
                        )?,
                        bias: Tensor::zeros(vec![filters]),
                        padding,
                    })
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { size } => Layer::MaxPool { size },
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { units } => {
                    let inputs = in_shape[0];
                    let std = (2.0 / inputs as f64).sqrt();
                    Layer::Dense(DenseLayer {
                        weight: Tensor::new(vec![units, inputs], gaussian(units * inputs, std))?,
                        bias: Tensor::zeros(vec![units]),
                    })
                }
            };
            layers.push(built);
            in_shape = shapes[i].clone();
        }

        Ok(Network {
            layers,
            input_shape: [spec.input.channels, spec.input.height, spec.input.width],
            classes: spec.classes,
            cache: None,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let s = batch.shape();
        let [c, h, w] = self.input_shape;
        if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
            return Err(Error::Shape {
                context: "network input".into(),
                expected: format!("[N, {c}, {h}, {w}]"),
                actual: format!("{s:?}"),
            });
        }
        Ok(s[0])
    }

    fn run(&self, batch: &Tensor, mut caches: Option<&mut Vec<LayerCache>>) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(conv) => {
                    let out = conv_forward(&x, &conv.weight, &conv.bias, conv.padding);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::Conv { input: x });
                    }
                    out
                }
                Layer::Relu => {
                    let (out, mask) = relu_forward(&x);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::Relu { mask });
                    }
                    out
                }
                Layer::MaxPool { size } => {
                    let (out, argmax) = maxpool_forward(&x, *size);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::MaxPool {
                            input_shape: x.shape().to_vec(),
                            argmax,
                        });
                    }
                    out
                }
                Layer::Flatten => {
                    let n = x.shape()[0];
                    let rest: usize = x.shape()[1..].iter().product();
                    let out = x.reshaped(vec![n, rest])?;
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::Flatten {
                            input_shape: x.shape().to_vec(),
                        });
                    }
                    out
                }
                Layer::Dense(dense) => {
                    let out = dense_forward(&x, &dense.weight, &dense.bias);
                    if let Some(c) = caches.as_deref_mut() {
                        c.push(LayerCache::Dense { input: x });
                    }
                    out
                }
            };
        }
        Ok(x)
    }

    /// Forward pass that records activations for `backward`.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = self.run(batch, Some(&mut caches))?;
        self.cache = Some(caches);
        Ok(out)
    }

    /// Pure forward pass; does not touch the backward cache.
    pub fn infer(&self, batch: &Tensor) -> Result<Tensor> {
        self.run(batch, None)
    }

    /// Backpropagates `logit_grad` (dLoss/dLogits, shape `[N, classes]`)
    /// through the activations recorded by the last `forward`.
    ///
    /// Returns parameter gradients congruent with [`Network::parameters`].
    pub fn backward(&self, logit_grad: &Tensor) -> Result<NamedTensors> {
        let caches = self.cache.as_ref().ok_or_else(|| {
            Error::State("backward called before any forward pass".into())
        })?;
        let batch_n = match caches.first() {
            Some(LayerCache::Conv { input }) | Some(LayerCache::Dense { input }) => {
                input.shape()[0]
            }
            Some(LayerCache::MaxPool { input_shape, .. })
            | Some(LayerCache::Flatten { input_shape }) => input_shape[0],
            Some(LayerCache::Relu { .. }) | None => {
                return Err(Error::State(
                    "forward cache is unusable for backward".into(),
                ))
            }
        };
        if logit_grad.shape() != [batch_n, self.classes] {
            return Err(Error::Shape {
                context: "backward logit grad".into(),
                expected: format!("[{batch_n}, {}]", self.classes),
                actual: format!("{:?}", logit_grad.shape()),
            });
        }

        let mut param_grads: Vec<Option<(Tensor, Tensor)>> = vec![None; self.layers.len()];
        let mut grad = logit_grad.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            grad = match (layer, cache) {
                (Layer::Conv(conv), LayerCache::Conv { input }) => {
                    let (gw, gb, gi) = conv_backward(input, &conv.weight, conv.padding, &grad);
                    param_grads[i] = Some((gw, gb));
                    gi
                }
                (Layer::Relu, LayerCache::Relu { mask }) => relu_backward(mask, &grad),
                (Layer::MaxPool { .. }, LayerCache::MaxPool { input_shape, argmax }) => {
                    maxpool_backward(input_shape, argmax, &grad)
                }
                (Layer::Flatten, LayerCache::Flatten { input_shape }) => {
                    grad.reshaped(input_shape.clone())?
                }
                (Layer::Dense(dense), LayerCache::Dense { input }) => {
                    let (gw, gb, gi) = dense_backward(input, &dense.weight, &grad);
                    param_grads[i] = Some((gw, gb));
                    gi
                }
                _ => {
                    return Err(Error::State(
                        "forward cache does not match the layer stack".into(),
                    ))
                }
            };
        }

        let mut out = NamedTensors::new();
        for (i, slot) in param_grads.into_iter().enumerate() {
            if let Some((gw, gb)) = slot {
                out.push(format!("layer{i}.weight"), gw)?;
                out.push(format!("layer{i}.bias"), gb)?;
            }
        }
        Ok(out)
    }

    /// Snapshot of all parameters, ordered by layer.
    pub fn parameters(&self) -> NamedTensors {
        let mut out = NamedTensors::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(conv) => {
                    out.push(format!("layer{i}.weight"), conv.weight.clone())
                        .expect("unique names by construction");
                    out.push(format!("layer{i}.bias"), conv.bias.clone())
                        .expect("unique names by construction");
                }
                Layer::Dense(dense) => {
                    out.push(format!("layer{i}.weight"), dense.weight.clone())
                        .expect("unique names by construction");
                    out.push(format!("layer{i}.bias"), dense.bias.clone())
                        .expect("unique names by construction");
                }
                _ => {}
            }
        }
        out
    }

    /// Mutable access to every parameter tensor, in the same order as
    /// [`Network::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(conv) => {
                    out.push((format!("layer{i}.weight"), &mut conv.weight));
                    out.push((format!("layer{i}.bias"), &mut conv.bias));
                }
                Layer::Dense(dense) => {
                    out.push((format!("layer{i}.weight"), &mut dense.weight));
                    out.push((format!("layer{i}.bias"), &mut dense.bias));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites all parameters from a congruent snapshot.
    pub fn set_parameters(&mut self, params: &NamedTensors) -> Result<()> {
        self.parameters()
            .check_congruent(params, "Network::set_parameters")?;
        for (name, tensor) in self.parameters_mut() {
            *tensor = params.get(&name).expect("congruence checked").clone();
        }
        Ok(())
    }

    /// Detached copies of every conv layer's filter bank, in layer order.
    pub fn conv_layer_weights(&self) -> Vec<ConvLayerWeights> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, layer)| match layer {
                Layer::Conv(conv) => Some(ConvLayerWeights {
                    layer_index: i,
                    weights: conv.weight.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    /// Replaces one conv layer's filter bank (used by in-place grafting).
    pub fn set_conv_layer_weights(&mut self, bank: &ConvLayerWeights) -> Result<()> {
        match self.layers.get_mut(bank.layer_index) {
            Some(Layer::Conv(conv)) => {
                if conv.weight.shape() != bank.weights.shape() {
                    return Err(Error::Shape {
                        context: format!("set_conv_layer_weights layer{}", bank.layer_index),
                        expected: format!("{:?}", conv.weight.shape()),
                        actual: format!("{:?}", bank.weights.shape()),
                    });
                }
                conv.weight = bank.weights.clone();
                Ok(())
            }
            _ => Err(Error::Argument(format!(
                "layer {} is not a conv layer",
                bank.layer_index
            ))),
        }
    }
}

//! Masked feed-forward networks with hand-written backward passes.
//!
//! Every parametric layer carries a [`LayerState`]: weights, a binary mask of
//! the same shape, the exponentially smoothed gradient used for regrowth
//! decisions, and the optimizer velocity. Biases are always dense.

mod arch;
mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{self, ConvGeometry, Tensor};

pub use arch::{ModelId, NetworkBuilder};
pub use optim::{apply_mask, dense_sgd_step, momentum_update, sgd_step, OptimizerConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    /// Position among the parametric layers of the network.
    pub layer_index: usize,
    pub weights: Tensor,
    pub bias: Tensor,
    /// Exponential moving average of the dense weight gradient.
    pub momentum: Tensor,
    pub mask: Tensor,
    pub prune_rate: f64,
    pub velocity: Tensor,
    pub bias_velocity: Tensor,
}

impl LayerState {
    /// Fresh state with an all-ones mask and zeroed buffers.
    pub fn new(layer_index: usize, weights: Tensor, bias: Tensor) -> Self {
        let shape = weights.shape().to_vec();
        let bias_shape = bias.shape().to_vec();
        Self {
            layer_index,
            momentum: Tensor::zeros(&shape),
            mask: Tensor::ones(&shape),
            velocity: Tensor::zeros(&shape),
            bias_velocity: Tensor::zeros(&bias_shape),
            weights,
            bias,
            prune_rate: 0.0,
        }
    }

    pub fn numel(&self) -> usize {
        self.weights.numel()
    }

    /// Number of positions with `mask == 1`.
    pub fn active_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != 0.0).count()
    }

    pub fn density(&self) -> f64 {
        self.active_count() as f64 / self.numel() as f64
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.density()
    }

    /// Replaces the mask and zeroes weights outside it.
    pub fn set_mask(&mut self, mask: Tensor) -> Result<()> {
        mask.expect_shape(&self.weights, "set_mask")?;
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Input("mask values must be 0 or 1".into()));
        }
        self.mask = mask;
        apply_mask(self);
        Ok(())
    }

    /// Checks shape agreement, binary mask, and zero weights outside the mask.
    pub fn check_invariants(&self) -> Result<()> {
        self.momentum.expect_shape(&self.weights, "momentum")?;
        self.mask.expect_shape(&self.weights, "mask")?;
        self.velocity.expect_shape(&self.weights, "velocity")?;
        for (j, (&m, &w)) in self.mask.data().iter().zip(self.weights.data()).enumerate() {
            if m != 0.0 && m != 1.0 {
                return Err(Error::Contract(format!("layer {}: mask[{j}] = {m}", self.layer_index)));
            }
            if m == 0.0 && w != 0.0 {
                return Err(Error::Contract(format!(
                    "layer {}: masked weight {j} is {w}",
                    self.layer_index
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Weights `[out, in]`, input `[N, in]`.
    Linear(LayerState),
    /// Weights `[O, C, kh, kw]`, input `[N, C, H, W]`.
    Conv {
        state: LayerState,
        geometry: ConvGeometry,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
    },
    /// `[N, ...] -> [N, prod(...)]`.
    Flatten,
}

impl Layer {
    pub fn state(&self) -> Option<&LayerState> {
        match self {
            Layer::Linear(s) | Layer::Conv { state: s, .. } => Some(s),
            _ => None,
        }
    }

    pub fn state_mut(&mut self) -> Option<&mut LayerState> {
        match self {
            Layer::Linear(s) | Layer::Conv { state: s, .. } => Some(s),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Conv {
        geometry: ConvGeometry,
        input_h: usize,
        input_w: usize,
        output_h: usize,
        output_w: usize,
    },
}

/// Static description of one parametric layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub layer_index: usize,
    pub kind: ParamKind,
    pub numel: usize,
    /// First convolution of the network.
    pub first_conv: bool,
    /// Strided convolution.
    pub downsampling: bool,
    /// Final fully connected (classifier) layer.
    pub last_linear: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseNetwork {
    layers: Vec<Layer>,
    /// Per-example input shape, e.g. `[1, 28, 28]`.
    input_shape: Vec<usize>,
    num_classes: usize,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    /// `activations[0]` is the input batch, `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Tensor>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl ForwardPass {
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("forward pass has at least the input")
    }

    /// Winning input index of every pooling window, for pooling layers.
    pub fn pool_argmax(&self, layer: usize) -> Option<&[usize]> {
        self.pool_argmax.get(layer)?.as_deref()
    }
}

#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    /// Dense `∂E/∂W_i` per parametric layer, unmasked.
    pub weight_grads: Vec<Tensor>,
    pub bias_grads: Vec<Tensor>,
}

impl SparseNetwork {
    pub(crate) fn from_parts(layers: Vec<Layer>, input_shape: Vec<usize>, num_classes: usize) -> Self {
        Self {
            layers,
            input_shape,
            num_classes,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> impl Iterator<Item = &LayerState> {
        self.layers.iter().filter_map(Layer::state)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut LayerState> {
        self.layers.iter_mut().filter_map(Layer::state_mut)
    }

    pub fn num_params_layers(&self) -> usize {
        self.params().count()
    }

    pub fn param(&self, index: usize) -> Option<&LayerState> {
        self.params().nth(index)
    }

    pub fn param_mut(&mut self, index: usize) -> Option<&mut LayerState> {
        self.params_mut().nth(index)
    }

    pub fn total_weights(&self) -> usize {
        self.params().map(LayerState::numel).sum()
    }

    pub fn total_active(&self) -> usize {
        self.params().map(LayerState::active_count).sum()
    }

    pub fn densities(&self) -> Vec<f64> {
        self.params().map(LayerState::density).collect()
    }

    pub fn apply_masks(&mut self) {
        self.params_mut().for_each(apply_mask);
    }

    pub fn check_invariants(&self) -> Result<()> {
        self.params().try_for_each(LayerState::check_invariants)
    }

    /// Position of the layer that holds parametric layer `param_index`.
    pub fn layer_position(&self, param_index: usize) -> Option<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.state().is_some())
            .nth(param_index)
            .map(|(pos, _)| pos)
    }

    pub fn descriptors(&self) -> Vec<LayerDescriptor> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::new();
        let mut seen_conv = false;
        for layer in &self.layers {
            match layer {
                Layer::Linear(s) => {
                    out.push(LayerDescriptor {
                        layer_index: s.layer_index,
                        kind: ParamKind::Linear {
                            in_features: s.weights.dim(1),
                            out_features: s.weights.dim(0),
                        },
                        numel: s.numel(),
                        first_conv: false,
                        downsampling: false,
                        last_linear: false,
                    });
                    shape = vec![s.weights.dim(0)];
                }
                Layer::Conv { state, geometry } => {
                    let (oh, ow) = geometry
                        .output_hw(shape[1], shape[2])
                        .expect("network shapes are validated at construction");
                    out.push(LayerDescriptor {
                        layer_index: state.layer_index,
                        kind: ParamKind::Conv {
                            geometry: *geometry,
                            input_h: shape[1],
                            input_w: shape[2],
                            output_h: oh,
                            output_w: ow,
                        },
                        numel: state.numel(),
                        first_conv: !seen_conv,
                        downsampling: geometry.stride > 1,
                        last_linear: false,
                    });
                    seen_conv = true;
                    shape = vec![geometry.out_channels, oh, ow];
                }
                Layer::MaxPool { size, stride } => {
                    shape = vec![
                        shape[0],
                        (shape[1] - size) / stride + 1,
                        (shape[2] - size) / stride + 1,
                    ];
                }
                Layer::Flatten => shape = vec![shape.iter().product()],
                Layer::Relu => {}
            }
        }
        if let Some(last) = out
            .iter_mut()
            .rev()
            .find(|d| matches!(d.kind, ParamKind::Linear { .. }))
        {
            last.last_linear = true;
        }
        out
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.ndim() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(dim_err!(
                "batch shape {:?} does not match network input {:?}",
                batch.shape(),
                self.input_shape
            ));
        }
        Ok(())
    }

    /// Runs the network and keeps every intermediate activation.
    pub fn forward(&self, batch: &Tensor) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_argmax = Vec::with_capacity(self.layers.len());
        activations.push(batch.clone());
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let (y, argmax) = layer_forward(layer, x)?;
            activations.push(y);
            pool_argmax.push(argmax);
        }
        Ok(ForwardPass {
            activations,
            pool_argmax,
        })
    }

    /// Forward pass that only returns the logits.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer_forward(layer, &x)?.0;
        }
        Ok(x)
    }

    /// Softmax cross-entropy and dense gradients for every parametric layer.
    pub fn backward(&self, pass: &ForwardPass, labels: &[usize]) -> Result<LossValue> {
        if pass.activations.len() != self.layers.len() + 1 {
            return Err(Error::Contract("forward pass does not belong to this network".into()));
        }
        let (value, mut grad) = tensor::softmax_cross_entropy(pass.logits(), labels)?;
        let n_params = self.num_params_layers();
        let mut weight_grads = vec![None; n_params];
        let mut bias_grads = vec![None; n_params];
        let first_param = self.layer_position(0).unwrap_or(0);

        for (pos, layer) in self.layers.iter().enumerate().rev() {
            let x = &pass.activations[pos];
            let y = &pass.activations[pos + 1];
            // No layer before the first parametric one needs a gradient.
            let need_input = pos > first_param;
            grad = match layer {
                Layer::Linear(s) => {
                    let g = tensor::linear_backward(x, &s.weights, &grad, need_input)?;
                    weight_grads[s.layer_index] = Some(g.weight);
                    bias_grads[s.layer_index] = Some(g.bias);
                    match g.input {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                Layer::Conv { state, geometry } => {
                    let g = tensor::conv2d_backward(x, &state.weights, geometry, &grad, need_input)?;
                    weight_grads[state.layer_index] = Some(g.kernels);
                    bias_grads[state.layer_index] = Some(channel_sums(&grad));
                    match g.input {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                Layer::Relu => tensor::relu_backward(&grad, y)?,
                Layer::MaxPool { .. } => {
                    let argmax = pass.pool_argmax[pos]
                        .as_ref()
                        .ok_or_else(|| Error::Contract("missing pooling indices".into()))?;
                    tensor::max_pool2d_backward(&grad, argmax, x.shape())?
                }
                Layer::Flatten => grad.reshape(x.shape())?,
            };
        }
        Ok(LossValue {
            value,
            weight_grads: weight_grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            bias_grads: bias_grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
        })
    }

    /// Mean loss and classification error over a labelled set, in batches.
    pub fn evaluate(&self, images: &Tensor, labels: &[usize], batch_size: usize) -> Result<Evaluation> {
        let n = images.dim(0);
        if labels.len() != n {
            return Err(Error::Input(format!("{} labels for {n} examples", labels.len())));
        }
        let example: usize = images.shape()[1..].iter().product();
        let mut loss = 0f64;
        let mut wrong = 0usize;
        let mut start = 0;
        while start < n {
            let end = (start + batch_size).min(n);
            let mut shape = images.shape().to_vec();
            shape[0] = end - start;
            let batch = Tensor::new(&shape, images.data()[start * example..end * example].to_vec())?;
            let logits = self.logits(&batch)?;
            let (l, _) = tensor::softmax_cross_entropy(&logits, &labels[start..end])?;
            loss += l * (end - start) as f64;
            wrong += argmax_rows(&logits)
                .iter()
                .zip(&labels[start..end])
                .filter(|(p, l)| p != l)
                .count();
            start = end;
        }
        Ok(Evaluation {
            loss: loss / n as f64,
            error: wrong as f64 / n as f64,
        })
    }

    /// Re-initializes all weights Xavier-uniform and biases to zero, and
    /// resets the optimizer and smoothing buffers. Masks are left alone and
    /// re-applied.
    pub fn reinitialize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for s in self.params_mut() {
            s.weights = xavier_uniform(s.weights.shape(), rng);
            s.bias = Tensor::zeros(s.bias.shape());
            s.momentum = Tensor::zeros(s.weights.shape());
            s.velocity = Tensor::zeros(s.weights.shape());
            s.bias_velocity = Tensor::zeros(s.bias.shape());
            apply_mask(s);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub error: f64,
}

fn layer_forward(layer: &Layer, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
    Ok(match layer {
        Layer::Linear(s) => (tensor::linear(x, &s.weights, &s.bias)?, None),
        Layer::Conv { state, geometry } => {
            let mut y = tensor::conv2d(x, &state.weights, geometry)?;
            add_channel_bias(&mut y, &state.bias);
            (y, None)
        }
        Layer::Relu => (tensor::relu(x), None),
        Layer::MaxPool { size, stride } => {
            let p = tensor::max_pool2d(x, *size, *stride)?;
            (p.output, Some(p.argmax))
        }
        Layer::Flatten => {
            let n = x.dim(0);
            let rest = x.numel() / n;
            (x.clone().reshape(&[n, rest])?, None)
        }
    })
}

fn add_channel_bias(y: &mut Tensor, bias: &Tensor) {
    let c = y.dim(1);
    let plane = y.dim(2) * y.dim(3);
    for (i, chunk) in y.data_mut().chunks_exact_mut(plane).enumerate() {
        let b = bias.data()[i % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums(grad: &Tensor) -> Tensor {
    let c = grad.dim(1);
    let plane = grad.dim(2) * grad.dim(3);
    let mut acc = vec![0f64; c];
    for (i, chunk) in grad.data().chunks_exact(plane).enumerate() {
        acc[i % c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
    }
    Tensor::new(&[c], acc.into_iter().map(|v| v as f32).collect()).expect("c > 0")
}

/// Index of the largest entry in each row of a `[N, K]` tensor.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.dim(1);
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// Xavier/Glorot uniform initialization for a linear or conv weight shape.
pub fn xavier_uniform<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let receptive: usize = shape[2..].iter().product();
    let fan_in = shape[1] * receptive;
    let fan_out = shape[0] * receptive;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    Tensor::uniform(shape, -bound, bound, rng)
}

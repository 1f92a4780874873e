use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier_uniform, Layer, LayerState, SparseNetwork};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{ConvGeometry, Tensor};

/// Reference MNIST architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    /// 784-300-100-10 fully connected with ReLU.
    #[serde(rename = "lenet-300-100")]
    LeNet300100,
    /// conv(20, 5×5) → pool → conv(50, 5×5) → pool → fc(500) → fc(10).
    #[serde(rename = "lenet5-caffe")]
    LeNet5Caffe,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            ModelId::LeNet300100 => "lenet-300-100",
            ModelId::LeNet5Caffe => "lenet5-caffe",
        }
    }

    pub fn build<R: Rng + ?Sized>(self, rng: &mut R) -> SparseNetwork {
        let builder = match self {
            ModelId::LeNet300100 => NetworkBuilder::new(&[1, 28, 28])
                .flatten()
                .linear(300)
                .relu()
                .linear(100)
                .relu()
                .linear(10),
            ModelId::LeNet5Caffe => NetworkBuilder::new(&[1, 28, 28])
                .conv(20, 5, 1, 0)
                .relu()
                .max_pool(2, 2)
                .conv(50, 5, 1, 0)
                .relu()
                .max_pool(2, 2)
                .flatten()
                .linear(500)
                .relu()
                .linear(10),
        };
        builder.build(rng).expect("reference architectures are well formed")
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lenet-300-100" | "lenet300-100" | "lenet300" => Ok(ModelId::LeNet300100),
            "lenet5-caffe" | "lenet-5-caffe" | "lenet5" => Ok(ModelId::LeNet5Caffe),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

enum Spec {
    Linear(usize),
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool(usize, usize),
    Flatten,
}

/// Shape-inferring network builder. The last layer's width is the class count.
pub struct NetworkBuilder {
    input_shape: Vec<usize>,
    specs: Vec<Spec>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            specs: Vec::new(),
        }
    }

    pub fn linear(mut self, out_features: usize) -> Self {
        self.specs.push(Spec::Linear(out_features));
        self
    }

    pub fn conv(mut self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        self.specs.push(Spec::Conv {
            out: out_channels,
            kernel,
            stride,
            padding,
        });
        self
    }

    pub fn relu(mut self) -> Self {
        self.specs.push(Spec::Relu);
        self
    }

    pub fn max_pool(mut self, size: usize, stride: usize) -> Self {
        self.specs.push(Spec::MaxPool(size, stride));
        self
    }

    pub fn flatten(mut self) -> Self {
        self.specs.push(Spec::Flatten);
        self
    }

    /// Xavier-uniform weights, zero biases, all-ones masks.
    pub fn build<R: Rng + ?Sized>(self, rng: &mut R) -> Result<SparseNetwork> {
        let mut shape = self.input_shape.clone();
        let mut layers = Vec::with_capacity(self.specs.len());
        let mut index = 0;
        for spec in self.specs {
            match spec {
                Spec::Linear(out) => {
                    if shape.len() != 1 {
                        return Err(dim_err!("linear layer needs flat input, got {:?}", shape));
                    }
                    let w = xavier_uniform(&[out, shape[0]], rng);
                    layers.push(Layer::Linear(LayerState::new(index, w, Tensor::zeros(&[out]))));
                    index += 1;
                    shape = vec![out];
                }
                Spec::Conv {
                    out,
                    kernel,
                    stride,
                    padding,
                } => {
                    if shape.len() != 3 {
                        return Err(dim_err!("conv layer needs C×H×W input, got {:?}", shape));
                    }
                    let geometry = ConvGeometry::new(shape[0], out, kernel, stride, padding);
                    let (oh, ow) = geometry.output_hw(shape[1], shape[2])?;
                    let w = xavier_uniform(&geometry.kernel_shape(), rng);
                    layers.push(Layer::Conv {
                        state: LayerState::new(index, w, Tensor::zeros(&[out])),
                        geometry,
                    });
                    index += 1;
                    shape = vec![out, oh, ow];
                }
                Spec::Relu => layers.push(Layer::Relu),
                Spec::MaxPool(size, stride) => {
                    if shape.len() != 3 || shape[1] < size || shape[2] < size || size == 0 || stride == 0 {
                        return Err(dim_err!("cannot pool {:?} with window {size}", shape));
                    }
                    layers.push(Layer::MaxPool { size, stride });
                    shape = vec![shape[0], (shape[1] - size) / stride + 1, (shape[2] - size) / stride + 1];
                }
                Spec::Flatten => {
                    layers.push(Layer::Flatten);
                    shape = vec![shape.iter().product()];
                }
            }
        }
        if shape.len() != 1 || index == 0 {
            return Err(Error::Config("network must end in a linear layer".into()));
        }
        Ok(SparseNetwork::from_parts(layers, self.input_shape, shape[0]))
    }
}

//! Forward and backward rules for every layer kind.
//!
//! Each layer kind exposes pure functions (`*_forward` returning an output
//! and a cache, `*_backward` consuming an upstream error and that cache) plus
//! a stateful wrapper that owns its parameters and holds the cache between
//! one forward and one backward call. [`Layer`] dispatches over the wrappers.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod flatten;
mod pool;
mod shortcut;
mod softmax;

use std::fmt;

pub use activation::{relu_backward, relu_forward, Relu, ReluCache};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNorm, BatchNormCache, BatchNormGrads, BatchNormState,
    DEFAULT_EPS, DEFAULT_MOMENTUM,
};
pub use conv::{
    conv_backward, conv_forward_gemm, conv_forward_gemm_with, conv_forward_naive, conv_forward_naive_with,
    conv_input_grad, Conv2d, ConvCache, ConvGrads,
};
pub use dense::{fc_backward, fc_forward, Dense, DenseCache, DenseGrads};
pub use flatten::{flatten_forward, fold_backward, Flatten, FlattenCache};
pub use pool::{maxpool_backward, maxpool_forward, MaxPool, PoolCache};
pub use shortcut::{shortcut_add, shortcut_backward};
pub use softmax::{
    cross_entropy_backward, cross_entropy_loss, softmax_backward, softmax_ce_backward, softmax_forward,
    CrossEntropy, PROBABILITY_FLOOR,
};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor4};

/// Whether a forward pass keeps caches (and batch statistics) for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// A data or error array flowing between layers.
#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    Flat(Matrix),
    Image(Tensor4),
}

/// Shape of a [`Data`] value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataShape {
    Flat { n: usize, f: usize },
    Image { n: usize, d: usize, h: usize, w: usize },
}

impl DataShape {
    pub fn samples(&self) -> usize {
        match *self {
            DataShape::Flat { n, .. } | DataShape::Image { n, .. } => n,
        }
    }

    /// Values per sample.
    pub fn per_sample(&self) -> usize {
        match *self {
            DataShape::Flat { f, .. } => f,
            DataShape::Image { d, h, w, .. } => d * h * w,
        }
    }

    pub fn with_samples(self, n: usize) -> DataShape {
        match self {
            DataShape::Flat { f, .. } => DataShape::Flat { n, f },
            DataShape::Image { d, h, w, .. } => DataShape::Image { n, d, h, w },
        }
    }

    /// The shape with the batch dimension printed as `n`, e.g. `n×6×24×24`.
    pub fn symbolic(&self) -> String {
        match *self {
            DataShape::Flat { f, .. } => format!("n×{f}"),
            DataShape::Image { d, h, w, .. } => format!("n×{d}×{h}×{w}"),
        }
    }
}

impl fmt::Display for DataShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DataShape::Flat { n, f: feat } => write!(f, "{n}×{feat}"),
            DataShape::Image { n, d, h, w } => write!(f, "{n}×{d}×{h}×{w}"),
        }
    }
}

impl Data {
    pub fn shape(&self) -> DataShape {
        match self {
            Data::Flat(m) => DataShape::Flat {
                n: m.rows(),
                f: m.cols(),
            },
            Data::Image(t) => {
                let [n, d, h, w] = t.dims();
                DataShape::Image { n, d, h, w }
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Data::Flat(m) => m.data(),
            Data::Image(t) => t.data(),
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Data::Flat(m) => m.data_mut(),
            Data::Image(t) => t.data_mut(),
        }
    }

    pub fn as_flat(&self) -> Result<&Matrix> {
        match self {
            Data::Flat(m) => Ok(m),
            Data::Image(t) => Err(Error::shape("expected feature vectors", t.shape_string(), "n×f")),
        }
    }

    pub fn as_image(&self) -> Result<&Tensor4> {
        match self {
            Data::Image(t) => Ok(t),
            Data::Flat(m) => Err(Error::shape("expected images", m.shape_string(), "n×d×r×r")),
        }
    }

    pub fn into_flat(self) -> Result<Matrix> {
        match self {
            Data::Flat(m) => Ok(m),
            Data::Image(t) => Err(Error::shape("expected feature vectors", t.shape_string(), "n×f")),
        }
    }

    /// A zero array of the given shape.
    pub fn zeros(shape: DataShape) -> Data {
        match shape {
            DataShape::Flat { n, f } => Data::Flat(Matrix::zeros(n, f)),
            DataShape::Image { n, d, h, w } => Data::Image(Tensor4::zeros(n, d, h, w)),
        }
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Data> {
        match self {
            Data::Flat(m) => Ok(Data::Flat(Matrix::new(m.rows(), m.cols(), values)?)),
            Data::Image(t) => {
                let [n, d, h, w] = t.dims();
                Ok(Data::Image(Tensor4::new(n, d, h, w, values)?))
            }
        }
    }

    pub fn add(&self, other: &Data) -> Result<Data> {
        match (self, other) {
            (Data::Flat(a), Data::Flat(b)) => Ok(Data::Flat(a.add(b)?)),
            (Data::Image(a), Data::Image(b)) => Ok(Data::Image(a.add(b)?)),
            _ => Err(Error::shape("add", self.shape(), other.shape())),
        }
    }

    pub fn scale(&self, k: f64) -> Data {
        match self {
            Data::Flat(m) => Data::Flat(m.scale(k)),
            Data::Image(t) => Data::Image(t.scale(k)),
        }
    }
}

impl From<Matrix> for Data {
    fn from(m: Matrix) -> Self {
        Data::Flat(m)
    }
}

impl From<Tensor4> for Data {
    fn from(t: Tensor4) -> Self {
        Data::Image(t)
    }
}

/// A named trainable array and its gradient, stored flat in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, value: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let len: usize = dims.iter().product();
        if value.len() != len {
            return Err(Error::shape("ParamTensor::new", format!("{name} {dims:?}"), value.len()));
        }
        Ok(ParamTensor {
            name,
            dims,
            grad: vec![0.0; len],
            value,
        })
    }

    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        ParamTensor {
            name: name.into(),
            dims,
            value: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn as_matrix(&self) -> Matrix {
        let cols = *self.dims.last().unwrap_or(&1);
        Matrix::new(self.value.len() / cols, cols, self.value.clone()).expect("matrix parameter")
    }

    pub fn as_tensor4(&self) -> Tensor4 {
        let d = &self.dims;
        Tensor4::new(d[0], d[1], d[2], d[3], self.value.clone()).expect("rank-4 parameter")
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.value.len(), "{}", self.name);
        self.grad = grad;
    }
}

/// One layer of a feedforward network.
#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    Relu(Relu),
    BatchNorm(BatchNorm),
    MaxPool(MaxPool),
    Flatten(Flatten),
    Dense(Dense),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu(_) => "relu",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::MaxPool(_) => "maxpool",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    /// Forward pass; in [`Mode::Train`] the layer keeps what its backward needs.
    pub fn forward(&mut self, x: &Data, mode: Mode) -> Result<Data> {
        if mode == Mode::Infer {
            return self.infer(x);
        }
        match self {
            Layer::Conv(l) => l.forward(x.as_image()?).map(Data::Image),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::BatchNorm(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x.as_image()?).map(Data::Image),
            Layer::Flatten(l) => l.forward(x.as_image()?).map(Data::Flat),
            Layer::Dense(l) => l.forward(x.as_flat()?).map(Data::Flat),
        }
    }

    /// Cache-free forward pass; batch norm uses its running statistics.
    pub fn infer(&self, x: &Data) -> Result<Data> {
        match self {
            Layer::Conv(l) => l.infer(x.as_image()?).map(Data::Image),
            Layer::Relu(_) => Ok(relu_forward(x).0),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::MaxPool(l) => Ok(Data::Image(maxpool_forward(x.as_image()?, l.sampling)?.0)),
            Layer::Flatten(_) => Ok(Data::Flat(flatten_forward(x.as_image()?).0)),
            Layer::Dense(l) => l.infer(x.as_flat()?).map(Data::Flat),
        }
    }

    /// Consumes the cache of the preceding training forward pass, fills the
    /// parameter gradients and returns the downstream error when asked for.
    pub fn backward(&mut self, delta: &Data, need_input_grad: bool) -> Result<Option<Data>> {
        match self {
            Layer::Conv(l) => Ok(l.backward(delta.as_image()?, need_input_grad)?.map(Data::Image)),
            Layer::Relu(l) => l.backward(delta).map(Some),
            Layer::BatchNorm(l) => l.backward(delta).map(Some),
            Layer::MaxPool(l) => l.backward(delta.as_image()?).map(|t| Some(Data::Image(t))),
            Layer::Flatten(l) => l.backward(delta.as_flat()?).map(|t| Some(Data::Image(t))),
            Layer::Dense(l) => Ok(l.backward(delta.as_flat()?, need_input_grad)?.map(Data::Flat)),
        }
    }

    pub fn output_shape(&self, input: DataShape) -> Result<DataShape> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::Relu(_) => Ok(input),
            Layer::BatchNorm(l) => l.check_input(input).map(|_| input),
            Layer::MaxPool(l) => l.output_shape(input),
            Layer::Flatten(_) => match input {
                DataShape::Image { n, d, h, w } => Ok(DataShape::Flat { n, f: d * h * w }),
                flat => Err(Error::shape("flatten", flat, "n×d×r×r")),
            },
            Layer::Dense(l) => l.output_shape(input),
        }
    }

    /// Trainable tensors, weights before biases.
    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.state.weight, &l.state.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.state.weight, &mut l.state.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn has_cache(&self) -> bool {
        match self {
            Layer::Conv(l) => l.cache.is_some(),
            Layer::Relu(l) => l.cache.is_some(),
            Layer::BatchNorm(l) => l.cache.is_some(),
            Layer::MaxPool(l) => l.cache.is_some(),
            Layer::Flatten(l) => l.cache.is_some(),
            Layer::Dense(l) => l.cache.is_some(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.cache = None,
            Layer::Relu(l) => l.cache = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::MaxPool(l) => l.cache = None,
            Layer::Flatten(l) => l.cache = None,
            Layer::Dense(l) => l.cache = None,
        }
    }

    /// Input coordinates at which the layer is not smoothly differentiable
    /// within `margin`: ReLU inputs near zero and max-pool windows whose two
    /// largest entries nearly tie.
    pub fn kinks(&self, x: &Data, margin: f64) -> Result<Vec<bool>> {
        match self {
            Layer::Relu(_) => Ok(x.values().iter().map(|v| v.abs() < margin).collect()),
            Layer::MaxPool(l) => l.near_ties(x.as_image()?, margin),
            _ => Ok(vec![false; x.values().len()]),
        }
    }
}

pub(crate) fn missing_cache(kind: &str) -> Error {
    Error::Usage(format!("{kind} backward called without a cached training forward pass"))
}

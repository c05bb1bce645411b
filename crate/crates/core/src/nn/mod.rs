//! Trainable layers with hand-derived backward passes.
//!
//! Every layer consumes a single sample (a `[T, C]` sequence or a flat
//! vector). A forward call returns the output together with a [`Cache`]
//! holding whatever the matching backward call needs; backward accumulates
//! into each [`Param`]'s gradient buffer and returns the gradient with respect
//! to the layer input.

mod conv;
mod dense;
mod dropout;
mod lstm;
mod network;
mod pool;
mod shape;

pub use conv::Conv1d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use lstm::{Lstm, LstmCache};
pub use network::{build_tcmn, Layer, LayerSpec, Network, NetworkSpec};
pub use pool::MaxPool1d;
pub use shape::{Reshape, SeqReduction, SequenceReduce};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError};
use crate::Real;

pub type Rng = rand_chacha::ChaCha8Rng;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("usage error: {layer} backward called without a matching forward cache")]
    MissingCache { layer: &'static str },
    #[error("invalid hyperparameter for {layer}: {reason}")]
    Hyper { layer: &'static str, reason: String },
    #[error("build error between layer {prev} and layer {next}: {reason}")]
    Build {
        prev: String,
        next: String,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, x: Real) -> Real {
        match self {
            Activation::Identity => x,
            Activation::Relu => crate::tensor::relu(x),
        }
    }

    /// Derivative evaluated at the pre-activation. ReLU uses 0 at the kink.
    #[inline]
    pub(crate) fn derivative(self, pre: Real) -> Real {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter tensor with a gradient buffer of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Self::new(name, Tensor::zeros(shape))
    }

    /// Glorot-uniform initialization with limit sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as Real).sqrt();
        let mut value = Tensor::zeros(shape);
        for v in value.data_mut() {
            *v = rng.random_range(-limit..limit);
        }
        Self::new(name, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Values saved by a forward call for the matching backward call.
#[derive(Debug, Clone)]
pub enum Cache {
    Conv1d {
        input: Tensor,
        pre: Tensor,
    },
    MaxPool1d {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
        /// Smallest gap between the winner and runner-up of any window.
        min_gap: Real,
    },
    Dense {
        input: Tensor,
        pre: Tensor,
    },
    Dropout {
        mask: Option<Vec<Real>>,
    },
    Lstm(Box<LstmCache>),
    Reshape {
        input_shape: Vec<usize>,
    },
    SequenceReduce {
        input_shape: Vec<usize>,
    },
    Network(Vec<Cache>),
}

impl Cache {
    /// Distance from the cached forward pass to the nearest point where the
    /// layer is not differentiable (ReLU kink or max-pool tie). Smooth layers
    /// report infinity.
    pub fn kink_distance(&self) -> Real {
        let relu_gap = |pre: &Tensor| {
            pre.data()
                .iter()
                .fold(Real::INFINITY, |m, v| m.min(v.abs()))
        };
        match self {
            Cache::Conv1d { pre, .. } | Cache::Dense { pre, .. } => relu_gap(pre),
            Cache::MaxPool1d { min_gap, .. } => *min_gap,
            Cache::Network(caches) => caches
                .iter()
                .map(Cache::kink_distance)
                .fold(Real::INFINITY, Real::min),
            _ => Real::INFINITY,
        }
    }
}

/// A differentiable unit with explicit forward and backward passes.
pub trait Module {
    fn forward(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<(Tensor, Cache)>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad_out: &Tensor, cache: &Cache) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn name(&self) -> &str;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

pub(crate) fn ensure_rank2(layer: &'static str, x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [t, c] => Ok((*t, *c)),
        other => Err(NnError::Tensor(TensorError::Shape {
            shape: other.to_vec(),
            reason: format!("{layer} expects a [time, channels] input"),
        })),
    }
}

pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NnError {
    NnError::Tensor(TensorError::Mismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

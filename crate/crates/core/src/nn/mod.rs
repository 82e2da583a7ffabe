//! A small manual-gradient neural network kernel.
//!
//! Layers cache what their backward pass needs during `forward`, accumulate
//! parameter gradients during `backward`, and return the gradient with
//! respect to their input. There is no autodiff graph; models wire layers
//! together by hand.

mod dct;
pub mod gradcheck;
mod layers;
mod loss;
mod model;
mod optim;
mod train;

use thiserror::Error;

pub use dct::{dct2_matrix, Dct, DctTemporal};
pub use layers::{Conv1d, Dense, Dropout, Flatten, GradientReversal, Layer, LeakyRelu, Relu, Sequential};
pub use loss::{log_softmax, sigmoid, softmax, softmax_xent, XentOutput};
pub use model::{
    load_checkpoint, ClassifierGrads, ClassifierSpec, FrameClassifier, CHECKPOINT_MAGIC,
};
pub use optim::{Adam, AdamConfig, EarlyStopDecision, EarlyStopMode, EarlyStopPolicy};
pub use train::{
    argmax, frame_log_proba, mean_loss, overall_accuracy, train_classifier, EpochRecord, FrameSet, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: expected shape {expected:?}, got {found:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("non-finite gradient in parameter '{param}'")]
    Divergence { param: String },
    #[error("chunk of {found} frames does not match the module's chunk size {expected}")]
    Chunk { expected: usize, found: usize },
    #[error("invalid layer configuration: {0}")]
    Config(String),
    #[error("backward called before forward in {0}")]
    NoCache(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A dense row-major array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NnError::Shape {
                op: "tensor",
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(NnError::Shape {
                op: "reshape",
                expected: shape,
                found: self.shape,
            });
        }
        self.shape = shape;
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), numel);
        }
        Ok(self)
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A named trainable array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    /// He-normal initialization for a layer with `fan_in` inputs.
    pub fn he(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut impl rand::Rng) -> Self {
        use rand_distr::{Distribution, Normal};
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let n = shape.iter().product();
        let value = (0..n).map(|_| normal.sample(rng)).collect();
        Self::new(name, shape, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything holding trainable parameters.
pub trait Module {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Every parameter value, flattened in visit order.
    fn flat_params(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    fn flat_grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(&p.grad));
        out
    }

    fn set_flat_params(&mut self, values: &[f64]) {
        let mut offset = 0;
        self.visit_params(&mut |p| {
            let n = p.value.len();
            p.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        });
    }
}

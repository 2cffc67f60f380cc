//! Dense row-major tensors and a reverse-mode autodiff tape.
//!
//! [`Tensor`] is an immutable value (shape plus shared `f64` storage). All
//! differentiable computation goes through a [`Tape`]: leaves are registered
//! with [`Tape::leaf`] (gradient tracked) or [`Tape::constant`] (detached),
//! every op appends one node, and [`Tape::backward`] replays the nodes in
//! reverse order.
//!
//! Feature maps are channels-last: a 2D map is `H×W×C`, a 3D volume is
//! `D×H×W×C`. Convolution kernels are `k×k×Cin×Cout` and `k×k×k×Cin×Cout`.

mod conv;
mod tape;

pub use conv::Padding;
pub use tape::{Tape, Var};

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Stability constant added to the channel variance before the square root.
pub const NORM_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {found} were given")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: kernel {kernel:?} does not match input {input:?} (input channels differ)")]
    ChannelMismatch {
        op: &'static str,
        input: Vec<usize>,
        kernel: Vec<usize>,
    },
    #[error("{op}: shapes {left:?} and {right:?} are incompatible")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("concat: part {index} has shape {shape:?}, expected {expected:?} outside axis {axis}")]
    ConcatMismatch {
        index: usize,
        axis: usize,
        shape: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("axis {axis} is out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// An immutable N-dimensional array of `f64` in row-major order.
///
/// Cloning is cheap: storage is shared.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let expected = checked_numel(&shape)?;
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: data.into(),
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = checked_numel(&shape).expect("invalid shape");
        Self {
            shape,
            data: vec![value; n].into(),
        }
    }

    /// A one-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self::full([1], value)
    }

    /// Builds a tensor by evaluating `f` on every flat index.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let n = checked_numel(&shape).expect("invalid shape");
        Self {
            shape,
            data: (0..n).map(f).collect::<Vec<_>>().into(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Value at a multi-index. Panics when the index is out of range.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            assert!(i < n, "index {index:?} out of range for {:?}", self.shape);
            flat = flat * n + i;
        }
        self.data[flat]
    }

    /// Same storage viewed with a different shape.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if checked_numel(&shape)? != self.len() {
            return Err(TensorError::Reshape {
                from: self.shape.clone(),
                to: shape,
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect::<Vec<_>>().into(),
        }
    }

    /// Rounds every element to the nearest `f32` (checkpoint precision).
    pub fn round_to_f32(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

pub(crate) fn checked_numel(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.contains(&0) {
        return Err(TensorError::ZeroExtent(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| TensorError::InvalidArgument {
            op: "shape",
            reason: format!("element count of {shape:?} overflows"),
        })
}

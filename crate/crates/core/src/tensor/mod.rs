//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Every model equation is expressed through [`Tape`] primitives so that the
//! gradients used in training are exact by construction. Tensors have rank
//! 0, 1 or 2; the only broadcast supported is a vector added to each row of
//! a matrix.

mod kernels;
mod params;
mod tape;

pub use params::{Param, ParamId, ParamStore};
pub use tape::{Gradients, NodeId, Tape};

use std::fmt;

use num_traits::{Float, FromPrimitive};

/// Floating point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Real:
    Float + FromPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn to_f64c(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Extents of a tensor of rank 0, 1 or 2.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 2],
    rank: u8,
}

impl Shape {
    pub const fn scalar() -> Self {
        Shape { dims: [1, 1], rank: 0 }
    }

    pub const fn vector(n: usize) -> Self {
        Shape { dims: [1, n], rank: 1 }
    }

    pub const fn matrix(rows: usize, cols: usize) -> Self {
        Shape { dims: [rows, cols], rank: 2 }
    }

    /// Builds a shape from a list of extents (rank at most 2).
    pub fn from_dims(dims: &[usize]) -> Result<Self, TensorError> {
        match dims {
            [] => Ok(Self::scalar()),
            [n] => Ok(Self::vector(*n)),
            [r, c] => Ok(Self::matrix(*r, *c)),
            _ => Err(TensorError::UnsupportedRank(dims.len())),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    /// Row count; vectors and scalars count as a single row.
    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    /// Length of the last axis.
    pub fn cols(&self) -> usize {
        self.dims[1]
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match self.rank {
            0 => vec![],
            1 => vec![self.dims[1]],
            _ => vec![self.dims[0], self.dims[1]],
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A dense row-major tensor detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Shape, data: Vec<F>) -> Result<Self, TensorError> {
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![F::zero(); shape.len()],
        }
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        Tensor {
            shape: Shape::vector(data.len()),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::DataLength {
                    shape: Shape::matrix(rows.len(), cols),
                    len: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: Shape::matrix(rows.len(), cols),
            data,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.shape.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| G::from_f64c(v.to_f64c())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: non-finite value in output (numerical instability)")]
    NonFinite { op: &'static str },
    #[error("tensor of shape {shape} cannot hold {len} values")]
    DataLength { shape: Shape, len: usize },
    #[error("rank {0} tensors are not supported")]
    UnsupportedRank(usize),
    #[error("{op}: index {index} out of range for extent {extent}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("tape has no parameter store attached")]
    NoParams,
}

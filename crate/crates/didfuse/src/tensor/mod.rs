//! Dense rank-4 tensors (batch, channel, height, width) with reverse-mode
//! differentiation for the operations the fusion network needs.
//!
//! Values are stored flat in row-major order. The differentiation machinery
//! lives in [`graph`]: operations are recorded on a tape and replayed in
//! reverse by [`graph::Graph::backward`].

mod adam;
mod graph;

pub use adam::AdamState;
pub use graph::{Graph, Padding, Var};

use crate::error::{Error, Result};

/// Scalar type the whole crate is generic over. Training defaults to `f32`;
/// gradient-check suites instantiate `f64` because finite differences are
/// meaningless at single precision.
pub trait Real:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + std::iter::Sum + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Shorthand for converting an `f64` literal into the active scalar type.
pub fn r<R: Real>(x: f64) -> R {
    R::from_f64(x)
}

/// Tensor shape: (batch, channels, height, width).
pub type Shape = [usize; 4];

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

/// A dense rank-4 array. Immutable once produced by an operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    shape: Shape,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Shape, data: Vec<R>) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { data: vec![R::zero(); numel(&shape)], shape }
    }

    pub fn full(shape: Shape, value: R) -> Self {
        Tensor { data: vec![value; numel(&shape)], shape }
    }

    /// A 1x1x1x1 scalar tensor.
    pub fn scalar(value: R) -> Self {
        Tensor { shape: [1, 1, 1, 1], data: vec![value] }
    }

    /// Build from f64 values, converting into the active precision.
    pub fn from_f64(shape: Shape, values: &[f64]) -> Result<Self> {
        Tensor::new(shape, values.iter().map(|&v| R::from_f64(v)).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> R {
        let [_, cs, h, w] = self.shape;
        self.data[((b * cs + c) * h + y) * w + x]
    }

    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: R) {
        let [_, cs, h, w] = self.shape;
        self.data[((b * cs + c) * h + y) * w + x] = v;
    }

    /// One (batch, channel) plane as a contiguous slice.
    pub fn plane(&self, b: usize, c: usize) -> &[R] {
        let [_, cs, h, w] = self.shape;
        let start = (b * cs + c) * h * w;
        &self.data[start..start + h * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, R> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Tensor<R> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}

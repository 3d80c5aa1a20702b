//! Dense arrays and reverse-mode differentiation.
//!
//! [`Tensor`] is a plain row-major array. Differentiable computation happens
//! on a [`Tape`]: every primitive appends a node holding its output value and
//! whatever it needs for the backward pass, and [`Tape::backward`] walks the
//! nodes once in reverse.

mod checkpoint;
mod gradcheck;
pub(crate) mod kernels;
mod tape;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Scalar type used throughout the crate.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type used throughout the crate.
#[cfg(feature = "f32")]
pub type Real = f32;

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {expected} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: Real) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: Real) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(values: Vec<Real>) -> Self {
        Self { shape: vec![values.len()], data: values }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn at(&self, index: &[usize]) -> Real {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &extent)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < extent, "index {ix} out of range on axis {i}");
            flat = flat * extent + ix;
        }
        self.data[flat]
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<Real> {
        match self.data[..] {
            [v] => Ok(v),
            _ => Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn is_finite(&self) -> bool {
        // `v - v` is zero for finite `v` and NaN otherwise; the fold
        // vectorises where a short-circuiting scan would not.
        self.data.chunks(1024).all(|c| c.iter().fold(0.0, |acc, &v| acc + (v - v)) == 0.0)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Real {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, Real::max)
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) block sizes.
pub(crate) fn axis_blocks(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

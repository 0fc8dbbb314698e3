//! Dense row-major tensors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array with an optional gradient slot.
///
/// `trainable` decides whether the optimizer may update the values and
/// whether a gradient is ever stored for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
    pub grad: Option<Vec<S>>,
    pub trainable: bool,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != values.len() {
            return Err(Error::InvalidShape {
                shape,
                len: values.len(),
            });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
            trainable: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n]).expect("positive dims")
    }

    pub fn scalar(value: S) -> Self {
        Self::new(vec![1], vec![value]).expect("scalar shape")
    }

    /// Builds a tensor from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[&[S]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Model("ragged rows".into()));
        }
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], values)
    }

    /// Entries drawn i.i.d. from `Uniform(lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let values = (0..n)
            .map(|_| if lo == hi { S::of(lo) } else { S::of(rng.gen_range(lo..hi)) })
            .collect();
        Self::new(shape.to_vec(), values).expect("positive dims")
    }

    pub fn trainable(mut self, flag: bool) -> Self {
        self.trainable = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != self.values.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row `i` of a matrix (or of the tensor viewed as `[.., last]`).
    pub fn row(&self, i: usize) -> &[S] {
        let cols = *self.shape.last().expect("non-empty shape");
        &self.values[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| T::of(v.as_f64())).collect()),
            trainable: self.trainable,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }
}

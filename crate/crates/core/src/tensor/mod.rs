//! Dense tensors and the element types they may hold.
//!
//! Training runs in `f32`; gradient verification runs the identical code
//! path in `f64`. Everything numeric in the crate is generic over [`Scalar`].

pub(crate) mod io;

pub use io::{read_tensor, read_tensor_from, write_tensor, write_tensor_to, AnyTensor, DType};

use std::fmt::{Debug, Display};

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type usable by tensors and the autodiff graph.
pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Shorthand for converting an `f64` literal into the working precision.
#[inline]
pub fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v)
}

/// An immutable, contiguous, row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    data: ArrayD<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        let data = ArrayD::from_shape_vec(IxDyn(shape), data)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn from_array(data: ArrayD<T>) -> Self {
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Self { data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { data: ArrayD::zeros(IxDyn(shape)) }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self { data: ArrayD::ones(IxDyn(shape)) }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self { data: ArrayD::from_elem(IxDyn(shape), value) }
    }

    pub fn scalar(value: T) -> Self {
        Self { data: ArrayD::from_elem(IxDyn(&[]), value) }
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        self.data.as_slice().expect("tensor storage is always contiguous")
    }

    pub fn array(&self) -> &ArrayD<T> {
        &self.data
    }

    pub fn into_array(self) -> ArrayD<T> {
        self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.as_slice().to_vec()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { data: self.data.mapv(|v| U::from_f64(v.as_f64())) }
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> From<ArrayD<T>> for Tensor<T> {
    fn from(data: ArrayD<T>) -> Self {
        Self::from_array(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_extent_product() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn transposed_input_is_made_contiguous() {
        let a = ndarray::Array2::<f64>::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64);
        let t = Tensor::from_array(a.reversed_axes().into_dyn());
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.as_slice(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn cast_round_trips_representable_values() {
        let t = Tensor::<f64>::from_vec(&[3], vec![0.5, -2.0, 3.25]).unwrap();
        assert_eq!(t.cast::<f32>().cast::<f64>(), t);
    }
}

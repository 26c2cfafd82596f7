use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::features::FeatureArray;

/// Element type of the network: `f32` for training, `f64` for gradient
/// checks.
pub trait Scalar: Float + Debug + Default + AddAssign + Sum + Send + Sync + 'static {
    fn of(v: f64) -> Self {
        Self::from(v).expect("finite f64 converts")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Row-major dense array with a leading batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("dims {dims:?} do not hold {} values", data.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_features(a: &FeatureArray) -> Self {
        Tensor {
            dims: a.dims().to_vec(),
            data: a.data().iter().map(|&v| T::of(f64::from(v))).collect(),
        }
    }

    pub fn to_features(&self) -> FeatureArray {
        FeatureArray::new(
            self.dims.clone(),
            self.data.iter().map(|v| v.f64() as f32).collect(),
        )
        .expect("tensor dims are consistent")
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values of batch item `b`.
    pub fn item(&self, b: usize) -> &[T] {
        let per = self.data.len() / self.dims[0];
        &self.data[b * per..(b + 1) * per]
    }

    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {dims:?}", self.dims)));
        }
        self.dims = dims;
        Ok(self)
    }
}

/// A named trainable array with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Param {
            name: name.into(),
            dims,
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    pub fn filled(name: impl Into<String>, dims: Vec<usize>, v: T) -> Self {
        let mut p = Self::zeros(name, dims);
        p.value.fill(v);
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

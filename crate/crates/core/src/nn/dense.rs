use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ParamStore;
use crate::{Error, Result, Scalar};

/// Weights of one fully connected layer, `out = x · W + b`.
///
/// `weight` has shape `(input_dim, output_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        DenseParams {
            weight: Array2::zeros((input_dim, output_dim)),
            bias: Array1::zeros(output_dim),
        }
    }

    /// He-scaled normal init, zero bias.
    pub fn he<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let std = (2.0 / input_dim.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = Array2::from_shape_simple_fn((input_dim, output_dim), || {
            T::lit(normal.sample(rng))
        });
        DenseParams {
            weight,
            bias: Array1::zeros(output_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn num_scalars(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        affine(x, self.weight.view(), self.bias.view())
    }

    /// Returns `(dW, db, dx)` for upstream gradient `dout`.
    pub fn backward(&self, x: ArrayView2<T>, dout: ArrayView2<T>) -> (Self, Array2<T>) {
        let (dw, db, dx) = affine_backward(x, self.weight.view(), dout);
        (DenseParams { weight: dw, bias: db }, dx)
    }
}

impl<T: Scalar> ParamStore<T> for DenseParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// `x · w + b` with shape checking.
pub fn affine<T: Scalar>(
    x: ArrayView2<T>,
    w: ArrayView2<T>,
    b: ArrayView1<T>,
) -> Result<Array2<T>> {
    if x.ncols() != w.nrows() {
        return Err(Error::shape(format!(
            "input has {} columns, layer expects {}",
            x.ncols(),
            w.nrows()
        )));
    }
    if b.len() != w.ncols() {
        return Err(Error::shape(format!(
            "bias length {} != output dim {}",
            b.len(),
            w.ncols()
        )));
    }
    let mut out = x.dot(&w);
    out += &b;
    Ok(out)
}

/// Gradients of `x · w + b` with respect to `w`, `b` and `x`.
pub fn affine_backward<T: Scalar>(
    x: ArrayView2<T>,
    w: ArrayView2<T>,
    dout: ArrayView2<T>,
) -> (Array2<T>, Array1<T>, Array2<T>) {
    // the product of a transposed view can come out column-major
    let dw = x.t().dot(&dout).as_standard_layout().into_owned();
    let db = dout.sum_axis(Axis(0));
    let dx = dout.dot(&w.t());
    (dw, db, dx)
}

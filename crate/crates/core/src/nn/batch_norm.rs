//! Batch normalization.
//!
//! Training mode standardizes each feature with the mini-batch mean and
//! (biased) variance and folds the batch moments into moving averages.
//! Evaluation mode standardizes with the stored moving averages and never
//! mutates them. The standardize/unstandardize halves are exposed separately
//! because partitioned normalization reuses them with per-domain state.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub eps: f64,
    /// Weight kept on the old moving average at each update.
    pub momentum: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            eps: 1e-5,
            momentum: 0.99,
        }
    }
}

/// Learnable scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn identity(dim: usize) -> Self {
        Affine {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

impl<T: Scalar> ParamStore<T> for Affine<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.gamma.as_slice().expect("standard layout"),
            self.beta.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.gamma.as_slice_mut().expect("standard layout"),
            self.beta.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Moving-average mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub mean: Array1<T>,
    pub var: Array1<T>,
    /// Number of training batches folded in so far.
    pub updates: u64,
}

impl<T: Scalar> Moments<T> {
    /// Zero mean, unit variance, never updated.
    pub fn new(dim: usize) -> Self {
        Moments {
            mean: Array1::zeros(dim),
            var: Array1::ones(dim),
            updates: 0,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.updates > 0
    }

    /// Fold one batch into the moving averages. The first batch replaces the
    /// cold-start values outright.
    pub fn absorb(&mut self, batch_mean: ArrayView1<T>, batch_var: ArrayView1<T>, momentum: f64) {
        let m = if self.updates == 0 { T::zero() } else { T::lit(momentum) };
        let keep = T::one() - m;
        Zip::from(&mut self.mean)
            .and(batch_mean)
            .for_each(|e, &b| *e = m * *e + keep * b);
        Zip::from(&mut self.var)
            .and(batch_var)
            .for_each(|e, &b| *e = m * *e + keep * b);
        self.updates += 1;
    }
}

/// Standardized activations plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
    /// True when batch statistics were used (gradient flows through them).
    pub batch_stats: bool,
}

/// Batch moments of one standardization: mean and unbiased variance, the
/// values folded into moving averages.
#[derive(Debug, Clone)]
pub struct BatchMoments<T> {
    pub mean: Array1<T>,
    pub unbiased_var: Array1<T>,
}

pub fn standardize_batch<T: Scalar>(
    z: ArrayView2<T>,
    eps: f64,
) -> Result<(NormCache<T>, BatchMoments<T>)> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::contract(format!(
            "batch normalization in training mode needs at least 2 rows, got {n}"
        )));
    }
    let nf = T::from_usize(n).expect("batch size");
    let mean = z.sum_axis(Axis(0)) / nf;
    let centered = &z - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / nf;
    let eps = T::lit(eps);
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let xhat = &centered * &inv_std;
    let unbiased_var = &var * (nf / (nf - T::one()));
    Ok((
        NormCache {
            xhat,
            inv_std,
            batch_stats: true,
        },
        BatchMoments { mean, unbiased_var },
    ))
}

pub fn standardize_with<T: Scalar>(
    z: ArrayView2<T>,
    mean: ArrayView1<T>,
    var: ArrayView1<T>,
    eps: f64,
) -> Result<NormCache<T>> {
    if z.ncols() != mean.len() || z.ncols() != var.len() {
        return Err(Error::shape(format!(
            "normalization expects {} features, got {}",
            mean.len(),
            z.ncols()
        )));
    }
    let eps = T::lit(eps);
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let xhat = &(&z - &mean) * &inv_std;
    Ok(NormCache {
        xhat,
        inv_std,
        batch_stats: false,
    })
}

/// Gradient of the standardization step, `d xhat -> d z`.
pub fn standardize_backward<T: Scalar>(dxhat: ArrayView2<T>, cache: &NormCache<T>) -> Array2<T> {
    if !cache.batch_stats {
        return &dxhat * &cache.inv_std;
    }
    let n = T::from_usize(dxhat.nrows()).expect("batch size");
    let sum_d = dxhat.sum_axis(Axis(0));
    let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let mut dz = &dxhat * n;
    dz -= &sum_d;
    dz -= &(&cache.xhat * &sum_dx);
    dz *= &(&cache.inv_std / n);
    dz
}

/// `gamma * xhat + beta` for already-combined scale/shift vectors.
pub fn scale_shift<T: Scalar>(
    xhat: ArrayView2<T>,
    scale: ArrayView1<T>,
    shift: ArrayView1<T>,
) -> Array2<T> {
    let mut out = &xhat * &scale;
    out += &shift;
    out
}

/// Full batch-norm forward pass.
///
/// In training mode the batch moments are folded into `moments`; in
/// evaluation mode `moments` is read only.
pub fn batch_norm_forward<T: Scalar>(
    z: ArrayView2<T>,
    affine: &Affine<T>,
    moments: &mut Moments<T>,
    config: NormConfig,
    training: bool,
) -> Result<(Array2<T>, NormCache<T>)> {
    if z.ncols() != affine.dim() {
        return Err(Error::shape(format!(
            "batch norm expects {} features, got {}",
            affine.dim(),
            z.ncols()
        )));
    }
    let cache = if training {
        let (cache, batch) = standardize_batch(z, config.eps)?;
        moments.absorb(batch.mean.view(), batch.unbiased_var.view(), config.momentum);
        cache
    } else {
        standardize_with(z, moments.mean.view(), moments.var.view(), config.eps)?
    };
    let out = scale_shift(cache.xhat.view(), affine.gamma.view(), affine.beta.view());
    Ok((out, cache))
}

pub fn batch_norm_backward<T: Scalar>(
    dout: ArrayView2<T>,
    affine: &Affine<T>,
    cache: &NormCache<T>,
) -> (Affine<T>, Array2<T>) {
    let dgamma = (&dout * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dout.sum_axis(Axis(0));
    let dxhat = &dout * &affine.gamma;
    let dz = standardize_backward(dxhat.view(), cache);
    (
        Affine {
            gamma: dgamma,
            beta: dbeta,
        },
        dz,
    )
}

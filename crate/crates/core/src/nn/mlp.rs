//! Multi-layer perceptron with explicit reverse mode.
//!
//! Each hidden layer is `dense -> [batch norm] -> leaky ReLU`; the output
//! layer is dense with no activation and produces logits. Predictions are
//! the logistic squashing of the logits, clamped strictly inside (0, 1).

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{leaky_relu, leaky_relu_backward, DEFAULT_LEAKY_SLOPE};
use super::batch_norm::{
    batch_norm_backward, scale_shift, standardize_batch, standardize_with, Affine, BatchMoments,
    Moments, NormCache, NormConfig,
};
use super::{AdamState, DenseParams, ParamStore, StopGrad};
use crate::{clamp_prob, sigmoid, Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Width of the logit layer; 1 for a single probability head.
    pub output_dim: usize,
    pub leaky_relu_slope: f64,
    pub use_batch_norm: bool,
    pub norm: NormConfig,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        MlpConfig {
            input_dim,
            hidden,
            ..MlpConfig::default()
        }
    }

    pub fn with_output_dim(mut self, output_dim: usize) -> Self {
        self.output_dim = output_dim;
        self
    }

    pub fn with_batch_norm(mut self, on: bool) -> Self {
        self.use_batch_norm = on;
        self
    }

    /// Number of dense layers, output layer included.
    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        if !(self.leaky_relu_slope > 0.0 && self.leaky_relu_slope < 1.0) {
            return Err(Error::config("leaky ReLU slope must lie in (0, 1)"));
        }
        Ok(())
    }
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 1,
            hidden: vec![256, 256, 128],
            output_dim: 1,
            leaky_relu_slope: DEFAULT_LEAKY_SLOPE,
            use_batch_norm: true,
            norm: NormConfig::default(),
        }
    }
}

/// Learnable parameters of an [`Mlp`]; also used as its gradient bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub dense: Vec<DenseParams<T>>,
    /// One affine per hidden layer when batch norm is on, otherwise empty.
    pub norm: Vec<Affine<T>>,
}

impl<T: Scalar> ParamStore<T> for MlpParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.dense
            .iter()
            .flat_map(|d| d.tensors())
            .chain(self.norm.iter().flat_map(|a| a.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for d in &mut self.dense {
            out.extend(d.tensors_mut());
        }
        for a in &mut self.norm {
            out.extend(a.tensors_mut());
        }
        out
    }
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    input: Array2<T>,
    norm: Option<NormCache<T>>,
    pre_activation: Array2<T>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    version: u64,
    layers: Vec<LayerCache<T>>,
    output_input: Array2<T>,
    pub logits: Array2<T>,
}

impl<T> MlpCache<T> {
    /// Number of dense layers the cache covers.
    pub fn num_layers(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn batch_size(&self) -> usize {
        self.output_input.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct MlpOutput<T> {
    pub logits: Array2<T>,
    pub predictions: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    config: MlpConfig,
    pub params: MlpParams<T>,
    pub moments: Vec<Moments<T>>,
    version: u64,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut dense = Vec::with_capacity(config.num_layers());
        let mut prev = config.input_dim;
        for &h in &config.hidden {
            dense.push(DenseParams::he(prev, h, rng));
            prev = h;
        }
        dense.push(DenseParams::he(prev, config.output_dim, rng));
        let (norm, moments) = if config.use_batch_norm {
            (
                config.hidden.iter().map(|&h| Affine::identity(h)).collect(),
                config.hidden.iter().map(|&h| Moments::new(h)).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Mlp {
            config,
            params: MlpParams { dense, norm },
            moments,
            version: 0,
        })
    }

    /// Build from explicit parameters (moving moments start at zero mean,
    /// unit variance).
    pub fn from_params(config: MlpConfig, params: MlpParams<T>) -> Result<Self> {
        config.validate()?;
        if params.dense.len() != config.num_layers() {
            return Err(Error::shape("dense layer count does not match config"));
        }
        let mut prev = config.input_dim;
        let widths = config.hidden.iter().chain(std::iter::once(&config.output_dim));
        for (d, &w) in params.dense.iter().zip(widths) {
            if d.input_dim() != prev || d.output_dim() != w || d.bias.len() != w {
                return Err(Error::shape("dense layer dimensions do not match config"));
            }
            prev = w;
        }
        let expected_norm = if config.use_batch_norm { config.hidden.len() } else { 0 };
        if params.norm.len() != expected_norm {
            return Err(Error::shape("batch-norm layer count does not match config"));
        }
        let moments = params.norm.iter().map(|a| Moments::new(a.dim())).collect();
        Ok(Mlp {
            config,
            params,
            moments,
            version: 0,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn slope(&self) -> T {
        T::lit(self.config.leaky_relu_slope)
    }

    /// Shared forward path. Returns the batch moments that a training call
    /// must fold into the moving averages.
    fn run(
        &self,
        x: ArrayView2<T>,
        training: bool,
    ) -> Result<(MlpOutput<T>, MlpCache<T>, Vec<BatchMoments<T>>)> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::shape(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        let slope = self.slope();
        let mut layers = Vec::with_capacity(self.config.hidden.len());
        let mut batch_moments = Vec::new();
        let mut h = x.to_owned();
        let hidden = self.config.hidden.len();
        for (i, dense) in self.params.dense[..hidden].iter().enumerate() {
            let z = dense.forward(h.view())?;
            let (pre, norm) = if self.config.use_batch_norm {
                let cache = if training {
                    let (cache, batch) = standardize_batch(z.view(), self.config.norm.eps)?;
                    batch_moments.push(batch);
                    cache
                } else {
                    let m = &self.moments[i];
                    standardize_with(z.view(), m.mean.view(), m.var.view(), self.config.norm.eps)?
                };
                let affine = &self.params.norm[i];
                let out = scale_shift(cache.xhat.view(), affine.gamma.view(), affine.beta.view());
                (out, Some(cache))
            } else {
                (z, None)
            };
            let next = leaky_relu(pre.view(), slope);
            layers.push(LayerCache {
                input: h,
                norm,
                pre_activation: pre,
            });
            h = next;
        }
        let logits = self.params.dense[hidden].forward(h.view())?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logit in forward pass".into()));
        }
        let predictions = logits.mapv(|s| clamp_prob(sigmoid(s)));
        let cache = MlpCache {
            version: self.version,
            layers,
            output_input: h,
            logits: logits.clone(),
        };
        Ok((
            MlpOutput {
                logits,
                predictions,
            },
            cache,
            batch_moments,
        ))
    }

    /// Forward pass. Training mode uses batch statistics and updates the
    /// moving averages; evaluation mode uses the moving averages.
    pub fn forward(&mut self, x: ArrayView2<T>, training: bool) -> Result<(MlpOutput<T>, MlpCache<T>)> {
        let (out, cache, batch) = self.run(x, training)?;
        let momentum = self.config.norm.momentum;
        for (m, b) in self.moments.iter_mut().zip(&batch) {
            m.absorb(b.mean.view(), b.unbiased_var.view(), momentum);
        }
        Ok((out, cache))
    }

    /// Evaluation-mode forward pass on an immutable network.
    pub fn infer(&self, x: ArrayView2<T>) -> Result<MlpOutput<T>> {
        self.run(x, false).map(|(o, _, _)| o)
    }

    /// Training-mode forward pass that leaves moving averages untouched.
    pub fn forward_frozen(&self, x: ArrayView2<T>, training: bool) -> Result<(MlpOutput<T>, MlpCache<T>)> {
        self.run(x, training).map(|(o, c, _)| (o, c))
    }

    /// Reverse pass for upstream gradients with respect to the logits.
    ///
    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache<T>, dlogits: ArrayView2<T>) -> Result<(MlpParams<T>, Array2<T>)> {
        if cache.version != self.version {
            return Err(Error::contract(format!(
                "stale cache: produced at parameter version {}, network is at {}",
                cache.version, self.version
            )));
        }
        if cache.layers.len() != self.config.hidden.len() {
            return Err(Error::contract("cache layer count does not match network"));
        }
        if dlogits.dim() != cache.logits.dim() {
            return Err(Error::shape(format!(
                "upstream gradient shape {:?} != logits shape {:?}",
                dlogits.dim(),
                cache.logits.dim()
            )));
        }
        let slope = self.slope();
        let hidden = self.config.hidden.len();
        let mut dense_grads = vec![None; hidden + 1];
        let mut norm_grads = vec![None; if self.config.use_batch_norm { hidden } else { 0 }];

        let (g_out, mut dh) = self.params.dense[hidden].backward(cache.output_input.view(), dlogits);
        dense_grads[hidden] = Some(g_out);
        for i in (0..hidden).rev() {
            let layer = &cache.layers[i];
            let dpre = leaky_relu_backward(dh.view(), layer.pre_activation.view(), slope);
            let dz = match &layer.norm {
                Some(norm_cache) => {
                    let (g_aff, dz) = batch_norm_backward(dpre.view(), &self.params.norm[i], norm_cache);
                    norm_grads[i] = Some(g_aff);
                    dz
                }
                None => dpre,
            };
            let (g, dx) = self.params.dense[i].backward(layer.input.view(), dz.view());
            dense_grads[i] = Some(g);
            dh = dx;
        }
        Ok((
            MlpParams {
                dense: dense_grads.into_iter().map(|g| g.expect("filled")).collect(),
                norm: norm_grads.into_iter().map(|g| g.expect("filled")).collect(),
            },
            dh,
        ))
    }

    /// Reverse pass for a single-output network where each sample's upstream
    /// gradient is scaled by a constant importance weight.
    pub fn backward_weighted(
        &self,
        cache: &MlpCache<T>,
        upstream: &[T],
        weights: &[StopGrad<T>],
    ) -> Result<(MlpParams<T>, Array2<T>)> {
        let n = cache.batch_size();
        if upstream.len() != n || weights.len() != n || cache.logits.ncols() != 1 {
            return Err(Error::shape(
                "weighted backward needs one upstream value and weight per sample of a single-output net",
            ));
        }
        let d = Array2::from_shape_fn((n, 1), |(i, _)| upstream[i] * weights[i].get());
        self.backward(cache, d.view())
    }

    /// One Adam step. Invalidates caches from earlier forward calls.
    pub fn apply_gradients(&mut self, grads: &MlpParams<T>, adam: &mut AdamState<T>) -> Result<()> {
        adam.update(&mut self.params, grads)?;
        self.version += 1;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }
}

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CtrModel, FeatureBatch};
use crate::nn::{AdamConfig, AdamState, EmbeddingParams, Mlp, MlpCache, MlpConfig, MlpParams, ParamStore};
use crate::{Error, Result, Scalar};

/// Embedding lookup followed by an MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnConfig {
    /// Vocabulary size of each feature field.
    pub vocab_sizes: Vec<usize>,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub use_batch_norm: bool,
    pub adam: AdamConfig,
}

impl DnnConfig {
    pub fn new(vocab_sizes: Vec<usize>, embedding_dim: usize, hidden: Vec<usize>) -> Self {
        DnnConfig {
            vocab_sizes,
            embedding_dim,
            hidden,
            output_dim: 1,
            use_batch_norm: true,
            adam: AdamConfig::default(),
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig::new(self.vocab_sizes.len() * self.embedding_dim, self.hidden.clone())
            .with_output_dim(self.output_dim)
            .with_batch_norm(self.use_batch_norm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_sizes.is_empty() || self.embedding_dim == 0 {
            return Err(Error::config("model needs at least one feature field and a positive embedding size"));
        }
        self.mlp_config().validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnParams<T> {
    pub embedding: EmbeddingParams<T>,
    pub mlp: MlpParams<T>,
}

impl<T: Scalar> ParamStore<T> for DnnParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.embedding.tensors();
        out.extend(self.mlp.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.embedding.tensors_mut();
        out.extend(self.mlp.tensors_mut());
        out
    }
}

#[derive(Debug, Clone)]
pub struct DnnCache<T> {
    ids: Array2<u32>,
    mlp: MlpCache<T>,
}

impl<T> DnnCache<T> {
    pub fn logits(&self) -> &Array2<T> {
        &self.mlp.logits
    }
}

#[derive(Debug, Clone)]
pub struct DnnModel<T> {
    config: DnnConfig,
    pub embedding: EmbeddingParams<T>,
    pub mlp: Mlp<T>,
    embedding_adam: AdamState<T>,
    mlp_adam: AdamState<T>,
}

impl<T: Scalar> DnnModel<T> {
    pub fn new<R: Rng + ?Sized>(config: DnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embedding = EmbeddingParams::new(&config.vocab_sizes, config.embedding_dim, rng);
        let mlp = Mlp::new(config.mlp_config(), rng)?;
        Ok(DnnModel {
            embedding_adam: AdamState::new(config.adam),
            mlp_adam: AdamState::new(config.adam),
            config,
            embedding,
            mlp,
        })
    }

    pub fn config(&self) -> &DnnConfig {
        &self.config
    }

    pub fn params(&self) -> DnnParams<T> {
        DnnParams {
            embedding: self.embedding.clone(),
            mlp: self.mlp.params.clone(),
        }
    }

    /// Copy of this model carrying `params` (moving moments are kept).
    pub fn with_params(&self, params: DnnParams<T>) -> Result<Self> {
        let mut out = self.clone();
        let moments = out.mlp.moments.clone();
        out.mlp = Mlp::from_params(self.config.mlp_config(), params.mlp)?;
        out.mlp.moments = moments;
        out.embedding = params.embedding;
        Ok(out)
    }

    pub fn num_scalars(&self) -> usize {
        self.embedding.num_scalars() + self.mlp.num_scalars()
    }

    /// Training-mode forward; logits have shape `(n, output_dim)`.
    pub fn forward(&mut self, ids: ArrayView2<u32>) -> Result<(Array2<T>, DnnCache<T>)> {
        let x = self.embedding.forward(ids)?;
        let (out, cache) = self.mlp.forward(x.view(), true)?;
        Ok((
            out.logits,
            DnnCache {
                ids: ids.to_owned(),
                mlp: cache,
            },
        ))
    }

    /// Evaluation-mode logits, shape `(n, output_dim)`.
    pub fn infer(&self, ids: ArrayView2<u32>) -> Result<Array2<T>> {
        let x = self.embedding.forward(ids)?;
        Ok(self.mlp.infer(x.view())?.logits)
    }

    pub fn backward(&self, cache: &DnnCache<T>, dlogits: ArrayView2<T>) -> Result<DnnParams<T>> {
        let (mlp, dx) = self.mlp.backward(&cache.mlp, dlogits)?;
        let embedding = self.embedding.backward(cache.ids.view(), dx.view())?;
        Ok(DnnParams { embedding, mlp })
    }

    pub fn apply_gradients(&mut self, grads: &DnnParams<T>) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient; update refused".into()));
        }
        self.embedding_adam.update(&mut self.embedding, &grads.embedding)?;
        self.mlp.apply_gradients(&grads.mlp, &mut self.mlp_adam)
    }

    fn check_single_output(&self) -> Result<()> {
        if self.config.output_dim != 1 {
            return Err(Error::contract("single-logit interface needs output_dim = 1"));
        }
        Ok(())
    }
}

impl<T: Scalar> CtrModel<T> for DnnModel<T> {
    type Cache = DnnCache<T>;

    fn train_forward(&mut self, batch: &FeatureBatch) -> Result<(Vec<T>, DnnCache<T>)> {
        self.check_single_output()?;
        let (logits, cache) = self.forward(batch.ids.view())?;
        Ok((logits.index_axis(Axis(1), 0).to_vec(), cache))
    }

    fn train_backward(&mut self, cache: DnnCache<T>, dlogits: &[T]) -> Result<()> {
        let n = cache.mlp.batch_size();
        let d = Array2::from_shape_vec((n, 1), dlogits.to_vec())
            .map_err(|_| Error::shape("one logit gradient per sample required"))?;
        let grads = self.backward(&cache, d.view())?;
        self.apply_gradients(&grads)
    }

    fn predict_logits(&self, batch: &FeatureBatch) -> Result<Vec<T>> {
        self.check_single_output()?;
        Ok(self.infer(batch.ids.view())?.index_axis(Axis(1), 0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::DomainId;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch() -> FeatureBatch {
        FeatureBatch::new(array![[0u32, 1], [2, 0], [1, 1]], vec![DomainId::FIRST; 3]).unwrap()
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = DnnConfig::new(vec![3, 2], 4, vec![8]);
        let mut model = DnnModel::<f64>::new(cfg, &mut rng).unwrap();
        let b = batch();
        let labels = [1.0, 0.0, 1.0];
        for _ in 0..200 {
            let (logits, cache) = model.train_forward(&b).unwrap();
            let d: Vec<f64> = logits
                .iter()
                .zip(labels)
                .map(|(&s, y)| crate::sigmoid(s) - y)
                .collect();
            model.train_backward(cache, &d).unwrap();
        }
        let p = model.predict(&b).unwrap();
        assert!(p[0] > 0.5 && p[1] < 0.5 && p[2] > 0.5, "{p:?}");
    }

    #[test]
    fn multi_output_refuses_single_logit_interface() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = DnnConfig::new(vec![3, 2], 4, vec![8]);
        cfg.output_dim = 3;
        let model = DnnModel::<f64>::new(cfg, &mut rng).unwrap();
        assert!(matches!(model.predict(&batch()), Err(Error::Contract(_))));
        assert_eq!(model.infer(batch().ids.view()).unwrap().dim(), (3, 3));
    }
}

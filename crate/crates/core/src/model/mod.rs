//! Trainable click/conversion models on categorical features.

mod dnn;

use ndarray::Array2;

pub use dnn::{DnnCache, DnnConfig, DnnModel, DnnParams};

use crate::stream::{ClickEvent, DomainId};
use crate::{clamp_prob, sigmoid, Error, Result, Scalar};

/// Categorical feature ids and domain indicators for a set of clicks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    /// One row per sample, one column per feature field.
    pub ids: Array2<u32>,
    pub domains: Vec<DomainId>,
}

impl FeatureBatch {
    pub fn new(ids: Array2<u32>, domains: Vec<DomainId>) -> Result<Self> {
        if ids.nrows() != domains.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} domain ids",
                ids.nrows(),
                domains.len()
            )));
        }
        Ok(FeatureBatch { ids, domains })
    }

    /// Gather the clicks at `indices`; every click must have `num_fields` ids.
    pub fn gather<I>(events: &[ClickEvent], indices: I, num_fields: usize) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut flat = Vec::new();
        let mut domains = Vec::new();
        for i in indices {
            let e = &events[i];
            if e.features.len() != num_fields {
                return Err(Error::shape(format!(
                    "event {} has {} feature fields, expected {num_fields}",
                    e.id,
                    e.features.len()
                )));
            }
            flat.extend_from_slice(&e.features);
            domains.push(e.domain);
        }
        let ids = Array2::from_shape_vec((domains.len(), num_fields), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        Ok(FeatureBatch { ids, domains })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }
}

/// A single-logit model trained by minibatch reverse mode with its own
/// optimizer state.
pub trait CtrModel<T: Scalar> {
    type Cache;

    /// Training-mode forward pass; returns one logit per sample.
    fn train_forward(&mut self, batch: &FeatureBatch) -> Result<(Vec<T>, Self::Cache)>;

    /// Backpropagate per-sample logit gradients and take one optimizer step.
    fn train_backward(&mut self, cache: Self::Cache, dlogits: &[T]) -> Result<()>;

    /// Evaluation-mode logits.
    fn predict_logits(&self, batch: &FeatureBatch) -> Result<Vec<T>>;

    /// Evaluation-mode probabilities, clamped strictly inside (0, 1).
    fn predict(&self, batch: &FeatureBatch) -> Result<Vec<T>> {
        Ok(self
            .predict_logits(batch)?
            .into_iter()
            .map(|s| clamp_prob(sigmoid(s)))
            .collect())
    }
}

/// Shuffled minibatch index sets over `0..n`. A trailing batch of one sample
/// is merged into its predecessor so batch statistics stay defined.
pub fn minibatches<R: rand::Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    split_batches(order, batch_size)
}

/// Consecutive chunks of `order`, with the same singleton-tail merge as
/// [`minibatches`].
pub fn split_batches(order: Vec<usize>, batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(2)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("predecessor").extend(tail);
    }
    out
}

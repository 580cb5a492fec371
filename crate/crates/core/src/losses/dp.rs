use rand::Rng;
use serde::{Deserialize, Serialize};

use super::weighted::{vanilla_logloss, weighted_logloss_grad, ImportanceWeights};
use crate::model::{minibatches, CtrModel, DnnConfig, DnnModel, FeatureBatch};
use crate::stream::ClickEvent;
use crate::{clamp_prob, Result, Scalar};

/// Training settings for the fake-negative classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpTrainConfig {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub use_batch_norm: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for DpTrainConfig {
    fn default() -> Self {
        DpTrainConfig {
            embedding_dim: 8,
            hidden: vec![64, 32],
            use_batch_norm: true,
            lr: 0.01,
            epochs: 1,
            batch_size: 256,
        }
    }
}

impl DpTrainConfig {
    pub fn dnn_config(&self, vocab_sizes: Vec<usize>) -> DnnConfig {
        let mut cfg = DnnConfig::new(vocab_sizes, self.embedding_dim, self.hidden.clone());
        cfg.use_batch_norm = self.use_batch_norm;
        cfg.adam = cfg.adam.with_lr(self.lr);
        cfg
    }
}

/// Classifier for the probability that a click is a fake negative.
///
/// When fitted on single-class data it answers with that class's constant
/// probability until online updates have seen both classes.
#[derive(Debug, Clone)]
pub struct DpModel<T> {
    net: DnnModel<T>,
    constant: Option<T>,
    seen: [bool; 2],
}

impl<T: Scalar> DpModel<T> {
    pub fn new<R: Rng + ?Sized>(config: &DpTrainConfig, vocab_sizes: Vec<usize>, rng: &mut R) -> Result<Self> {
        Ok(DpModel {
            net: DnnModel::new(config.dnn_config(vocab_sizes), rng)?,
            constant: None,
            seen: [false; 2],
        })
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    pub fn net(&self) -> &DnnModel<T> {
        &self.net
    }

    pub fn predict(&self, batch: &FeatureBatch) -> Result<Vec<T>> {
        match self.constant {
            Some(c) => Ok(vec![c; batch.len()]),
            None => self.net.predict(batch),
        }
    }

    /// One log-loss step on `batch` with binary fake-negative targets.
    /// Returns the mean loss before the step.
    pub fn update(&mut self, batch: &FeatureBatch, targets: &[u8]) -> Result<T> {
        for &t in targets {
            self.seen[usize::from(t == 1)] = true;
        }
        let (logits, cache) = self.net.train_forward(batch)?;
        let unit = ImportanceWeights::unit();
        let mut loss = T::zero();
        let mut grads = Vec::with_capacity(logits.len());
        let n = T::lit(logits.len() as f64);
        for (&s, &y) in logits.iter().zip(targets) {
            let f = crate::sigmoid(s);
            loss += vanilla_logloss(f, y);
            grads.push(weighted_logloss_grad(f, y, &unit) / n);
        }
        self.net.train_backward(cache, &grads)?;
        if self.seen == [true, true] {
            self.constant = None;
        }
        Ok(loss / n)
    }
}

/// Fit a fake-negative classifier on `(event index, is fake negative)` pairs.
///
/// Single-class data yields a constant model at that class's clamped
/// probability and logs a warning.
pub fn train_dp_classifier<T: Scalar, R: Rng + ?Sized>(
    events: &[ClickEvent],
    samples: &[(usize, u8)],
    vocab_sizes: Vec<usize>,
    config: &DpTrainConfig,
    rng: &mut R,
) -> Result<DpModel<T>> {
    let mut model = DpModel::new(config, vocab_sizes.clone(), rng)?;
    let positives = samples.iter().filter(|(_, t)| *t == 1).count();
    if positives == 0 || positives == samples.len() {
        let p = if positives == 0 { T::zero() } else { T::one() };
        log::warn!("fake-negative classifier fitted on single-class data; using a constant model");
        model.constant = Some(clamp_prob(p));
        model.seen = [positives == 0, positives != 0];
        return Ok(model);
    }
    let fields = vocab_sizes.len();
    for _ in 0..config.epochs {
        for idx in minibatches(samples.len(), config.batch_size, rng) {
            if idx.len() < 2 {
                continue;
            }
            let batch = FeatureBatch::gather(events, idx.iter().map(|&i| samples[i].0), fields)?;
            let targets: Vec<u8> = idx.iter().map(|&i| samples[i].1).collect();
            model.update(&batch, &targets)?;
        }
    }
    Ok(model)
}

//! Per-sample window selection with a multi-class classifier over a finite
//! set of candidate window lengths.

use ndarray::ArrayView1;
use rand::Rng;

use super::{ClickEvent, Delay};
use crate::model::{minibatches, DnnConfig, DnnModel, FeatureBatch};
use crate::{Error, Result, Scalar};

/// Candidate with the highest probability; ties go to the shorter window.
pub fn argmax_window<T: Scalar>(probs: ArrayView1<T>, candidates: &[u64]) -> Result<u64> {
    if candidates.is_empty() {
        return Err(Error::contract("window candidate set is empty"));
    }
    if probs.len() != candidates.len() {
        return Err(Error::shape("one probability per candidate window required"));
    }
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = probs[i] > probs[best] || (probs[i] == probs[best] && candidates[i] < candidates[best]);
        if better {
            best = i;
        }
    }
    Ok(candidates[best])
}

/// Softmax classifier `p(w | x)` over candidate windows.
#[derive(Debug, Clone)]
pub struct WindowModel<T> {
    candidates: Vec<u64>,
    pub net: DnnModel<T>,
}

impl<T: Scalar> WindowModel<T> {
    pub fn new<R: Rng + ?Sized>(mut config: DnnConfig, mut candidates: Vec<u64>, rng: &mut R) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::contract("window candidate set is empty"));
        }
        candidates.sort_unstable();
        candidates.dedup();
        config.output_dim = candidates.len();
        Ok(WindowModel {
            net: DnnModel::new(config, rng)?,
            candidates,
        })
    }

    pub fn candidates(&self) -> &[u64] {
        &self.candidates
    }

    /// Class index a converted click is trained towards: the shortest
    /// candidate covering its delay, else the longest candidate. `None` for
    /// clicks that never convert.
    pub fn target(&self, delay: Delay) -> Option<usize> {
        let z = delay.seconds()?;
        Some(
            self.candidates
                .iter()
                .position(|&w| z <= w)
                .unwrap_or(self.candidates.len() - 1),
        )
    }

    /// Class probabilities, one row per sample.
    pub fn probabilities(&self, batch: &FeatureBatch) -> Result<ndarray::Array2<T>> {
        let mut logits = self.net.infer(batch.ids.view())?;
        for mut row in logits.rows_mut() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|s| (s - max).exp());
            let total = row.sum();
            row.mapv_inplace(|e| e / total);
        }
        Ok(logits)
    }

    pub fn predict(&self, batch: &FeatureBatch) -> Result<Vec<u64>> {
        let probs = self.probabilities(batch)?;
        probs.rows().into_iter().map(|r| argmax_window(r, &self.candidates)).collect()
    }

    /// Cross-entropy training on the converted clicks among `events`.
    pub fn fit<R: Rng + ?Sized>(&mut self, events: &[ClickEvent], epochs: usize, batch_size: usize, rng: &mut R) -> Result<()> {
        let labelled: Vec<(usize, usize)> = events
            .iter()
            .enumerate()
            .filter_map(|(i, e)| self.target(e.delay).map(|t| (i, t)))
            .collect();
        let fields = self.net.config().vocab_sizes.len();
        for _ in 0..epochs {
            for idx in minibatches(labelled.len(), batch_size, rng) {
                if idx.len() < 2 {
                    continue;
                }
                let batch = FeatureBatch::gather(events, idx.iter().map(|&k| labelled[k].0), fields)?;
                let (logits, cache) = self.net.forward(batch.ids.view())?;
                let n = T::lit(idx.len() as f64);
                let mut grad = logits;
                for (mut row, &k) in grad.rows_mut().into_iter().zip(&idx) {
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    row.mapv_inplace(|s| (s - max).exp());
                    let total = row.sum();
                    row.mapv_inplace(|e| e / total / n);
                    row[labelled[k].1] -= T::one() / n;
                }
                let grads = self.net.backward(&cache, grad.view())?;
                self.net.apply_gradients(&grads)?;
            }
        }
        Ok(())
    }
}

/// Per-sample waiting window `w1`.
pub fn predict_waiting_window<T: Scalar>(batch: &FeatureBatch, model: &WindowModel<T>) -> Result<Vec<u64>> {
    model.predict(batch)
}

/// Per-sample approximation window `w3`; every candidate must lie strictly
/// inside `(w1, w2)`.
pub fn predict_attribution_window<T: Scalar>(
    batch: &FeatureBatch,
    model: &WindowModel<T>,
    w1: u64,
    w2: u64,
) -> Result<Vec<u64>> {
    if let Some(&c) = model.candidates().iter().find(|&&c| c <= w1 || c >= w2) {
        return Err(Error::config(format!(
            "attribution candidate {c}s outside ({w1}s, {w2}s)"
        )));
    }
    model.predict(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{DomainId, HOUR};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ties_go_to_shorter_window() {
        assert_eq!(argmax_window(array![0.5f64, 0.5].view(), &[900, 3600]).unwrap(), 900);
        assert_eq!(argmax_window(array![0.5f64, 0.5].view(), &[3600, 900]).unwrap(), 900);
        assert_eq!(argmax_window(array![1.0f64].view(), &[7]).unwrap(), 7);
        assert!(argmax_window::<f64>(array![].view(), &[]).is_err());
    }

    #[test]
    fn separates_fast_and_slow_groups() {
        let events: Vec<ClickEvent> = (0..2000)
            .map(|i| ClickEvent {
                id: i,
                features: vec![(i % 2) as u32],
                domain: DomainId::FIRST,
                click_ts: i,
                delay: Delay::After(if i % 2 == 0 { 600 } else { 5 * HOUR }),
                truth: None,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = WindowModel::<f64>::new(DnnConfig::new(vec![2], 4, vec![8]), vec![HOUR / 4, HOUR, 6 * HOUR], &mut rng).unwrap();
        m.fit(&events, 3, 64, &mut rng).unwrap();
        let b = FeatureBatch::gather(&events, 0..2, 1).unwrap();
        assert_eq!(predict_waiting_window(&b, &m).unwrap(), vec![HOUR / 4, 6 * HOUR]);
        assert!(predict_attribution_window(&b, &m, HOUR / 4, 6 * HOUR).is_err());
        assert!(predict_attribution_window(&b, &m, 60, 7 * HOUR).is_ok());
    }
}

//! Offline multi-task model: one conversion head plus one head per window.
//!
//! Logit column 0 scores `p(y=1|x)`; column `n` (1-based) scores
//! `p(z <= w_n | y=1, x)`. Window labels supervise the joint probability
//! `p(z <= w_n, y=1|x) = sigma(s_n) * sigma(s_y)`, so the conversion head
//! also learns from every observable window label.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::model::{DnnConfig, DnnModel, FeatureBatch};
use crate::stream::{ClickEvent, Delay};
use crate::{clamp_prob, sigmoid, Error, Result, Scalar};

/// Labels for one sample; `None` marks an unobservable label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiTaskLabels {
    pub y: Option<u8>,
    pub windows: Vec<Option<u8>>,
}

impl MultiTaskLabels {
    /// Labels known `age` seconds after the click. The last window doubles as
    /// the attribution window for `y`.
    pub fn observe(delay: Delay, age: u64, windows: &[u64]) -> Self {
        let observed = |limit: u64| match delay {
            Delay::After(z) if z <= limit && z <= age => Some(1),
            _ if age >= limit => Some(u8::from(delay.within(limit))),
            _ => None,
        };
        MultiTaskLabels {
            y: windows.last().and_then(|&w| observed(w)),
            windows: windows.iter().map(|&w| observed(w)).collect(),
        }
    }

    pub fn for_event(event: &ClickEvent, data_end: u64, windows: &[u64]) -> Self {
        Self::observe(event.delay, data_end.saturating_sub(event.click_ts), windows)
    }

    pub fn num_observable(&self) -> usize {
        usize::from(self.y.is_some()) + self.windows.iter().flatten().count()
    }
}

fn bce_and_grad<T: Scalar>(p: T, y: u8) -> (T, T) {
    let p = clamp_prob(p);
    if y == 1 {
        (-p.ln(), -T::one() / p)
    } else {
        (-(T::one() - p).ln(), T::one() / (T::one() - p))
    }
}

/// Summed masked log loss and its gradient with respect to the logits.
pub fn offline_multitask_loss<T: Scalar>(
    logits: ArrayView2<T>,
    labels: &[MultiTaskLabels],
) -> Result<(T, Array2<T>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::contract("one label set per sample required"));
    }
    let heads = logits.ncols();
    if heads < 2 {
        return Err(Error::contract("multi-task loss needs at least one window head"));
    }
    let mut loss = T::zero();
    let mut grad = Array2::zeros(logits.dim());
    for (i, lab) in labels.iter().enumerate() {
        if lab.windows.len() != heads - 1 {
            return Err(Error::contract(format!(
                "sample {i} has {} window labels, model has {} window heads",
                lab.windows.len(),
                heads - 1
            )));
        }
        let p_y = sigmoid(logits[[i, 0]]);
        if let Some(y) = lab.y {
            let (l, dp) = bce_and_grad(p_y, y);
            loss += l;
            grad[[i, 0]] += dp * p_y * (T::one() - p_y);
        }
        for (n, yn) in lab.windows.iter().enumerate() {
            let Some(yn) = *yn else { continue };
            let c = sigmoid(logits[[i, n + 1]]);
            let joint = c * p_y;
            let (l, dj) = bce_and_grad(joint, yn);
            loss += l;
            grad[[i, n + 1]] += dj * joint * (T::one() - c);
            grad[[i, 0]] += dj * joint * (T::one() - p_y);
        }
    }
    Ok((loss, grad))
}

/// Per-sample head probabilities: `p(y=1|x)` and the joint window
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadProbabilities<T> {
    pub conversion: Vec<T>,
    /// `joint[i][n] = p(z <= w_n, y=1 | x_i)`.
    pub joint: Vec<Vec<T>>,
}

pub fn head_probabilities<T: Scalar>(logits: ArrayView2<T>) -> HeadProbabilities<T> {
    let mut conversion = Vec::with_capacity(logits.nrows());
    let mut joint = Vec::with_capacity(logits.nrows());
    for row in logits.rows() {
        let p_y = sigmoid(row[0]);
        conversion.push(clamp_prob(p_y));
        joint.push(row.iter().skip(1).map(|&s| clamp_prob(sigmoid(s) * p_y)).collect());
    }
    HeadProbabilities { conversion, joint }
}

/// Shared-bottom network with `N + 1` heads.
#[derive(Debug, Clone)]
pub struct MultiTaskModel<T> {
    windows: Vec<u64>,
    pub net: DnnModel<T>,
}

impl<T: Scalar> MultiTaskModel<T> {
    pub fn new<R: Rng + ?Sized>(mut config: DnnConfig, windows: Vec<u64>, rng: &mut R) -> Result<Self> {
        if windows.is_empty() || windows.windows(2).any(|w| w[0] >= w[1]) || windows[0] == 0 {
            return Err(Error::config("multi-task windows must be positive and strictly increasing"));
        }
        config.output_dim = windows.len() + 1;
        Ok(MultiTaskModel {
            net: DnnModel::new(config, rng)?,
            windows,
        })
    }

    pub fn windows(&self) -> &[u64] {
        &self.windows
    }

    /// One optimizer step on the mean masked loss; returns that mean.
    pub fn train_step(&mut self, batch: &FeatureBatch, labels: &[MultiTaskLabels]) -> Result<T> {
        let (logits, cache) = self.net.forward(batch.ids.view())?;
        let (loss, mut grad) = offline_multitask_loss(logits.view(), labels)?;
        let n = T::lit(batch.len().max(1) as f64);
        grad.mapv_inplace(|g| g / n);
        let grads = self.net.backward(&cache, grad.view())?;
        self.net.apply_gradients(&grads)?;
        Ok(loss / n)
    }

    pub fn predict(&self, batch: &FeatureBatch) -> Result<HeadProbabilities<T>> {
        Ok(head_probabilities(self.net.infer(batch.ids.view())?.view()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::DAY;
    use ndarray::array;

    #[test]
    fn four_day_old_negative_sees_two_heads() {
        let w = [DAY, 3 * DAY, 5 * DAY];
        let l = MultiTaskLabels::observe(Delay::Never, 4 * DAY, &w);
        assert_eq!(l.windows, vec![Some(0), Some(0), None]);
        assert_eq!(l.y, None);
        // an observed conversion resolves every later window
        let l = MultiTaskLabels::observe(Delay::After(2 * DAY), 4 * DAY, &w);
        assert_eq!(l.windows, vec![Some(0), Some(1), Some(1)]);
        assert_eq!(l.y, Some(1));
        let l = MultiTaskLabels::observe(Delay::After(7 * DAY), 8 * DAY, &w);
        assert_eq!(l.y, Some(0));
    }

    #[test]
    fn perfect_predictions_have_near_zero_loss() {
        let logits = array![[30.0f64, 30.0, 30.0]];
        let labels = [MultiTaskLabels {
            y: Some(1),
            windows: vec![Some(1), Some(1)],
        }];
        let (loss, _) = offline_multitask_loss(logits.view(), &labels).unwrap();
        assert!(loss < 1e-6, "{loss}");
    }

    #[test]
    fn masked_heads_get_no_gradient_but_conversion_head_does() {
        let logits = array![[0.3f64, -0.2, 0.5, 1.1]];
        let labels = [MultiTaskLabels {
            y: None,
            windows: vec![Some(0), Some(1), None],
        }];
        let (_, g) = offline_multitask_loss(logits.view(), &labels).unwrap();
        assert_eq!(g[[0, 3]], 0.0);
        assert!(g[[0, 0]] != 0.0);
    }

    #[test]
    fn arity_mismatch_is_contract_error() {
        let logits = array![[0.3f64, -0.2]];
        let labels = [MultiTaskLabels {
            y: None,
            windows: vec![Some(0), None],
        }];
        assert!(matches!(
            offline_multitask_loss(logits.view(), &labels),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn joint_heads_never_exceed_conversion_head() {
        let logits = array![[0.3f64, 4.0, -3.0], [-2.0, 0.0, 9.0]];
        let h = head_probabilities(logits.view());
        for (p, js) in h.conversion.iter().zip(&h.joint) {
            assert!(js.iter().all(|j| j <= p));
        }
    }
}

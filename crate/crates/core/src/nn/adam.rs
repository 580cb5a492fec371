use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }
}

/// Adam moment accumulators for one parameter bundle.
///
/// Moments are allocated on the first update and must keep matching the
/// bundle's tensor layout afterwards.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected Adam step. A non-finite gradient refuses the
    /// update and leaves both parameters and state untouched.
    pub fn update<P: ParamStore<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let shapes = params.shapes();
        if grads.shapes() != shapes {
            return Err(Error::shape("gradient bundle layout differs from parameters"));
        }
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient; Adam update refused".into()));
        }
        if self.first.is_empty() {
            self.first = shapes.iter().map(|&n| vec![T::zero(); n]).collect();
            self.second = self.first.clone();
        } else if self.first.iter().map(Vec::len).collect::<Vec<_>>() != shapes {
            return Err(Error::shape("Adam state layout differs from parameters"));
        }

        self.step += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let lr = T::lit(self.config.lr);
        let eps = T::lit(self.config.eps);
        let step = self.step as i32;
        let corr1 = T::one() - b1.powi(step);
        let corr2 = T::one() - b2.powi(step);

        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_hand_value() {
        let mut theta = vec![0.0f64];
        let mut adam = AdamState::new(AdamConfig::default());
        adam.update(&mut theta, &vec![1.0]).unwrap();
        // m_hat = v_hat = 1 after bias correction.
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-18);
        assert!((theta[0] + 0.009999999900).abs() < 1e-12);
        assert_eq!(adam.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut theta = vec![0.5f32, -2.0];
        let mut adam = AdamState::new(AdamConfig::default());
        adam.update(&mut theta, &vec![0.0, 0.0]).unwrap();
        assert_eq!(theta, vec![0.5, -2.0]);
        assert_eq!(adam.step(), 1);
    }

    #[test]
    fn nan_gradient_is_refused() {
        let mut theta = vec![1.0f64];
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.update(&mut theta, &vec![f64::NAN]);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(theta, vec![1.0]);
        assert_eq!(adam.step(), 0);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut theta = vec![0.3f64, -0.7];
            let mut adam = AdamState::new(AdamConfig::default());
            let mut traj = Vec::new();
            for k in 0..50 {
                let g: Vec<f64> = theta.iter().map(|t| 2.0 * t + (k as f64).sin()).collect();
                adam.update(&mut theta, &g).unwrap();
                traj.extend(theta.iter().map(|t| t.to_bits()));
            }
            traj
        };
        assert_eq!(run(), run());
    }
}

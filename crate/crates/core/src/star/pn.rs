//! Partitioned normalization: batch normalization whose scale, shift and
//! moving moments are split into a shared part and one part per domain.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::nn::batch_norm::{scale_shift, standardize_backward, standardize_batch, standardize_with, NormCache};
use crate::nn::{Affine, Moments, NormConfig, ParamStore};
use crate::stream::DomainId;
use crate::{Error, Result, Scalar};

/// Learnable PN parameters: shared `(gamma, beta)` and per-domain
/// `(gamma_p, beta_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PnParams<T> {
    pub shared: Affine<T>,
    pub domains: Vec<Affine<T>>,
}

impl<T: Scalar> PnParams<T> {
    /// All scales one, all shifts zero.
    pub fn identity(dim: usize, num_domains: usize) -> Self {
        PnParams {
            shared: Affine::identity(dim),
            domains: vec![Affine::identity(dim); num_domains],
        }
    }

    pub fn dim(&self) -> usize {
        self.shared.dim()
    }

    pub(crate) fn domain(&self, p: DomainId) -> Result<&Affine<T>> {
        self.domains
            .get(p.index())
            .ok_or_else(|| Error::contract(format!("unknown domain {p}")))
    }

    /// Effective `(gamma * gamma_p, beta + beta_p)` for domain `p`.
    pub fn fused(&self, p: DomainId) -> Result<(Array1<T>, Array1<T>)> {
        let d = self.domain(p)?;
        Ok((&self.shared.gamma * &d.gamma, &self.shared.beta + &d.beta))
    }
}

impl<T: Scalar> ParamStore<T> for PnParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out = self.shared.tensors();
        for d in &self.domains {
            out.extend(d.tensors());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.shared.tensors_mut();
        for d in &mut self.domains {
            out.extend(d.tensors_mut());
        }
        out
    }
}

/// Training-mode PN on a single-domain batch. Folds the batch moments into
/// `moments`, which must be domain `p`'s moving moments.
pub fn pn_forward_train<T: Scalar>(
    z: ArrayView2<T>,
    p: DomainId,
    params: &PnParams<T>,
    moments: &mut Moments<T>,
    config: NormConfig,
) -> Result<(Array2<T>, NormCache<T>)> {
    check_width(z, params)?;
    let (gamma, beta) = params.fused(p)?;
    let (cache, batch) = standardize_batch(z, config.eps)?;
    moments.absorb(batch.mean.view(), batch.unbiased_var.view(), config.momentum);
    Ok((scale_shift(cache.xhat.view(), gamma.view(), beta.view()), cache))
}

/// Evaluation-mode PN with domain `p`'s moving moments.
pub fn pn_forward_eval<T: Scalar>(
    z: ArrayView2<T>,
    p: DomainId,
    params: &PnParams<T>,
    moments: &Moments<T>,
    config: NormConfig,
) -> Result<(Array2<T>, NormCache<T>)> {
    check_width(z, params)?;
    let (gamma, beta) = params.fused(p)?;
    let cache = standardize_with(z, moments.mean.view(), moments.var.view(), config.eps)?;
    Ok((scale_shift(cache.xhat.view(), gamma.view(), beta.view()), cache))
}

/// Gradients for domain `p`: returns `(shared grads, domain grads, dz)`.
pub fn pn_backward<T: Scalar>(
    dout: ArrayView2<T>,
    p: DomainId,
    params: &PnParams<T>,
    cache: &NormCache<T>,
) -> Result<(Affine<T>, Affine<T>, Array2<T>)> {
    let d = params.domain(p)?;
    let dgamma_eff = (&dout * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dout.sum_axis(Axis(0));
    let shared = Affine {
        gamma: &dgamma_eff * &d.gamma,
        beta: dbeta.clone(),
    };
    let domain = Affine {
        gamma: &dgamma_eff * &params.shared.gamma,
        beta: dbeta,
    };
    let gamma_eff = &params.shared.gamma * &d.gamma;
    let dxhat = &dout * &gamma_eff;
    Ok((shared, domain, standardize_backward(dxhat.view(), cache)))
}

fn check_width<T: Scalar>(z: ArrayView2<T>, params: &PnParams<T>) -> Result<()> {
    if z.ncols() != params.dim() {
        return Err(Error::shape(format!(
            "partitioned norm expects {} features, got {}",
            params.dim(),
            z.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn d(p: u16) -> DomainId {
        DomainId::new(p, 2).unwrap()
    }

    #[test]
    fn hand_value() {
        let mut params = PnParams::<f64>::identity(1, 2);
        params.shared.gamma[0] = 2.0;
        params.shared.beta[0] = 1.0;
        params.domains[0].gamma[0] = 3.0;
        params.domains[0].beta[0] = -1.0;
        let moments = Moments { mean: array![0.0], var: array![1.0], updates: 1 };
        let cfg = NormConfig { eps: 0.0, ..NormConfig::default() };
        let (out, _) = pn_forward_eval(array![[1.0]].view(), d(1), &params, &moments, cfg).unwrap();
        assert_eq!(out[[0, 0]], 6.0);
    }

    #[test]
    fn domains_use_their_own_moments() {
        let params = PnParams::<f64>::identity(1, 2);
        let m1 = Moments { mean: array![0.0], var: array![1.0], updates: 1 };
        let m2 = Moments { mean: array![5.0], var: array![1.0], updates: 1 };
        let z = array![[1.0]];
        let cfg = NormConfig::default();
        let (a, _) = pn_forward_eval(z.view(), d(1), &params, &m1, cfg).unwrap();
        let (b, _) = pn_forward_eval(z.view(), d(2), &params, &m2, cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn identity_on_standardized_batch() {
        let params = PnParams::<f64>::identity(2, 2);
        let mut m = Moments::new(2);
        let z = array![[-1.0, 1.0], [1.0, -1.0]];
        let (out, _) = pn_forward_train(z.view(), d(2), &params, &mut m, NormConfig::default()).unwrap();
        for (a, b) in out.iter().zip(&z) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn unknown_domain_is_contract_error() {
        let params = PnParams::<f64>::identity(1, 1);
        let mut m = Moments::new(1);
        let r = pn_forward_train(array![[1.0], [2.0]].view(), d(2), &params, &mut m, NormConfig::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}

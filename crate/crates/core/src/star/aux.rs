//! Auxiliary network: a two-layer MLP over the domain-indicator embedding
//! concatenated with the pooled features, producing an additive logit.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::activation::{leaky_relu, leaky_relu_backward};
use crate::nn::{DenseParams, ParamStore};
use crate::stream::DomainId;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct AuxNetParams<T> {
    /// One row per domain.
    pub domain_embedding: Array2<T>,
    pub hidden: DenseParams<T>,
    pub output: DenseParams<T>,
}

impl<T: Scalar> AuxNetParams<T> {
    pub fn new<R: Rng + ?Sized>(
        num_domains: usize,
        embedding_dim: usize,
        feature_dim: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, 0.05).expect("finite std");
        AuxNetParams {
            domain_embedding: Array2::from_shape_simple_fn((num_domains, embedding_dim), || {
                T::lit(normal.sample(rng))
            }),
            hidden: DenseParams::he(embedding_dim + feature_dim, width, rng),
            output: DenseParams::he(width, 1, rng),
        }
    }

    fn embed(&self, domains: &[DomainId]) -> Result<Array2<T>> {
        let m = self.domain_embedding.nrows();
        let mut out = Array2::zeros((domains.len(), self.domain_embedding.ncols()));
        for (i, d) in domains.iter().enumerate() {
            if d.index() >= m {
                return Err(Error::contract(format!("unknown domain {d}")));
            }
            out.row_mut(i).assign(&self.domain_embedding.row(d.index()));
        }
        Ok(out)
    }
}

impl<T: Scalar> ParamStore<T> for AuxNetParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out = vec![self.domain_embedding.as_slice().expect("standard layout")];
        out.extend(self.hidden.tensors());
        out.extend(self.output.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![self.domain_embedding.as_slice_mut().expect("standard layout")];
        out.extend(self.hidden.tensors_mut());
        out.extend(self.output.tensors_mut());
        out
    }
}

#[derive(Debug, Clone)]
pub struct AuxCache<T> {
    domains: Vec<DomainId>,
    input: Array2<T>,
    pre: Array2<T>,
    hidden: Array2<T>,
}

/// Auxiliary logits `s_a`, shape `(n, 1)`.
pub fn aux_forward<T: Scalar>(
    features: ArrayView2<T>,
    domains: &[DomainId],
    params: &AuxNetParams<T>,
    slope: T,
) -> Result<(Array2<T>, AuxCache<T>)> {
    if features.nrows() != domains.len() {
        return Err(Error::shape("one domain id per feature row required"));
    }
    let emb = params.embed(domains)?;
    let input = concatenate(Axis(1), &[emb.view(), features]).map_err(|e| Error::shape(e.to_string()))?;
    let pre = params.hidden.forward(input.view())?;
    let hidden = leaky_relu(pre.view(), slope);
    let logits = params.output.forward(hidden.view())?;
    Ok((
        logits,
        AuxCache {
            domains: domains.to_vec(),
            input,
            pre,
            hidden,
        },
    ))
}

/// Returns parameter gradients and the gradient with respect to the
/// feature input.
pub fn aux_backward<T: Scalar>(
    cache: &AuxCache<T>,
    dlogits: ArrayView2<T>,
    params: &AuxNetParams<T>,
    slope: T,
) -> (AuxNetParams<T>, Array2<T>) {
    let (g_out, dh) = params.output.backward(cache.hidden.view(), dlogits);
    let dpre = leaky_relu_backward(dh.view(), cache.pre.view(), slope);
    let (g_hidden, dinput) = params.hidden.backward(cache.input.view(), dpre.view());
    let e = params.domain_embedding.ncols();
    let mut g_emb = Array2::zeros(params.domain_embedding.dim());
    for (i, d) in cache.domains.iter().enumerate() {
        let mut row = g_emb.row_mut(d.index());
        row += &dinput.slice(s![i, ..e]);
    }
    (
        AuxNetParams {
            domain_embedding: g_emb,
            hidden: g_hidden,
            output: g_out,
        },
        dinput.slice(s![.., e..]).to_owned(),
    )
}

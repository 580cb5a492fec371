//! Star-topology fully connected network: every layer's weights are the
//! element-wise product of a shared and a domain-specific matrix, and its
//! bias the sum of a shared and a domain-specific vector.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::nn::activation::{leaky_relu, leaky_relu_backward};
use crate::nn::{affine_backward, DenseParams, ParamStore};
use crate::stream::DomainId;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct StarFcnParams<T> {
    /// Shared layers, input to output.
    pub shared: Vec<DenseParams<T>>,
    /// `domains[p][l]` has the shape of `shared[l]`.
    pub domains: Vec<Vec<DenseParams<T>>>,
}

impl<T: Scalar> StarFcnParams<T> {
    /// He-initialized shared layers; domain layers start at the fusion
    /// identity (weights one, biases zero).
    pub fn new<R: Rng + ?Sized>(widths: &[usize], num_domains: usize, rng: &mut R) -> Self {
        let shared: Vec<_> = widths.windows(2).map(|w| DenseParams::he(w[0], w[1], rng)).collect();
        let identity: Vec<_> = shared.iter().map(identity_like).collect();
        StarFcnParams {
            domains: vec![identity; num_domains],
            shared,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.shared.len()
    }

    pub fn domain_layers(&self, p: DomainId) -> Result<&[DenseParams<T>]> {
        self.domains
            .get(p.index())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::contract(format!("unknown domain {p}")))
    }

    /// Parameter count of the shared network alone.
    pub fn shared_scalars(&self) -> usize {
        self.shared.iter().map(DenseParams::num_scalars).sum()
    }
}

impl<T: Scalar> ParamStore<T> for StarFcnParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.shared.iter().flat_map(|d| d.tensors()).collect();
        for layers in &self.domains {
            out.extend(layers.iter().flat_map(|d| d.tensors()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for d in &mut self.shared {
            out.extend(d.tensors_mut());
        }
        for layers in &mut self.domains {
            for d in layers {
                out.extend(d.tensors_mut());
            }
        }
        out
    }
}

fn identity_like<T: Scalar>(d: &DenseParams<T>) -> DenseParams<T> {
    DenseParams {
        weight: Array2::ones(d.weight.dim()),
        bias: Array1::zeros(d.bias.len()),
    }
}

/// `W*_p = W_p * W`, `b*_p = b_p + b`.
pub fn fuse_layer<T: Scalar>(shared: &DenseParams<T>, domain: &DenseParams<T>) -> Result<DenseParams<T>> {
    if shared.weight.dim() != domain.weight.dim() || shared.bias.len() != domain.bias.len() {
        return Err(Error::shape("domain layer shape differs from shared layer"));
    }
    Ok(DenseParams {
        weight: &domain.weight * &shared.weight,
        bias: &domain.bias + &shared.bias,
    })
}

/// One fused layer, `phi(x · W*_p + b*_p)`; `slope` selects leaky ReLU,
/// `None` leaves the output linear.
pub fn star_layer_forward<T: Scalar>(
    x: ArrayView2<T>,
    shared: &DenseParams<T>,
    domain: &DenseParams<T>,
    slope: Option<T>,
) -> Result<Array2<T>> {
    let pre = fuse_layer(shared, domain)?.forward(x)?;
    Ok(match slope {
        Some(s) => leaky_relu(pre.view(), s),
        None => pre,
    })
}

/// Gradients of the pre-activation `x · W*_p + b*_p`: returns
/// `(shared grads, domain grads, dx)`.
pub fn star_layer_backward<T: Scalar>(
    x: ArrayView2<T>,
    shared: &DenseParams<T>,
    domain: &DenseParams<T>,
    dpre: ArrayView2<T>,
) -> Result<(DenseParams<T>, DenseParams<T>, Array2<T>)> {
    let fused = fuse_layer(shared, domain)?;
    let (dw, db, dx) = affine_backward(x, fused.weight.view(), dpre);
    Ok((
        DenseParams {
            weight: &dw * &domain.weight,
            bias: db.clone(),
        },
        DenseParams {
            weight: &dw * &shared.weight,
            bias: db,
        },
        dx,
    ))
}

/// Per-layer values the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct FcnCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
}

/// Run the star FCN for domain `p`; the last layer is linear.
pub(crate) fn fcn_forward<T: Scalar>(
    x: ArrayView2<T>,
    p: DomainId,
    params: &StarFcnParams<T>,
    slope: T,
) -> Result<(Array2<T>, FcnCache<T>)> {
    let domain = params.domain_layers(p)?;
    let last = params.num_layers() - 1;
    let mut inputs = Vec::with_capacity(params.num_layers());
    let mut pre = Vec::with_capacity(params.num_layers());
    let mut h = x.to_owned();
    for (l, (s, d)) in params.shared.iter().zip(domain).enumerate() {
        let z = fuse_layer(s, d)?.forward(h.view())?;
        let next = if l < last { leaky_relu(z.view(), slope) } else { z.clone() };
        inputs.push(h);
        pre.push(z);
        h = next;
    }
    Ok((h, FcnCache { inputs, pre }))
}

/// Accumulate domain `p`'s FCN gradients into `grads`; returns `dx`.
pub(crate) fn fcn_backward<T: Scalar>(
    cache: &FcnCache<T>,
    dout: ArrayView2<T>,
    p: DomainId,
    params: &StarFcnParams<T>,
    grads: &mut StarFcnParams<T>,
    slope: T,
) -> Result<Array2<T>> {
    let domain = params.domain_layers(p)?;
    let last = params.num_layers() - 1;
    let mut d = dout.to_owned();
    for l in (0..params.num_layers()).rev() {
        if l < last {
            d = leaky_relu_backward(d.view(), cache.pre[l].view(), slope);
        }
        let (gs, gd, dx) = star_layer_backward(cache.inputs[l].view(), &params.shared[l], &domain[l], d.view())?;
        grads.shared[l].add_assign(&gs);
        grads.domains[p.index()][l].add_assign(&gd);
        d = dx;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fusion_hand_values() {
        let shared = DenseParams { weight: array![[1.0, 2.0], [3.0, 4.0]], bias: array![1.0, 0.0] };
        let domain = DenseParams { weight: array![[2.0, 0.0], [1.0, 1.0]], bias: array![0.5, -1.0] };
        let f = fuse_layer(&shared, &domain).unwrap();
        assert_eq!(f.weight, array![[2.0, 0.0], [3.0, 4.0]]);
        assert_eq!(f.bias, array![1.5, -1.0]);
    }

    #[test]
    fn identity_domains_reproduce_shared_layer_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = StarFcnParams::<f64>::new(&[3, 4, 1], 2, &mut rng);
        let x = array![[0.3, -0.7, 1.9], [2.0, 0.1, -0.4]];
        let plain = p.shared[0].forward(x.view()).unwrap();
        let fused = star_layer_forward(x.view(), &p.shared[0], &p.domains[1][0], None).unwrap();
        assert_eq!(plain, fused);
    }

    #[test]
    fn parameter_count_is_m_plus_one_times_shared() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = StarFcnParams::<f32>::new(&[10, 8, 4, 1], 3, &mut rng);
        assert_eq!(p.num_scalars(), 4 * p.shared_scalars());
    }
}

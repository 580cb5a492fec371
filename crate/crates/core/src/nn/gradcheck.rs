//! Central finite differences, the oracle every analytic gradient is checked
//! against.

use super::ParamStore;
use crate::{Error, Result, Scalar};

/// Central-difference gradient of `loss_fn` at `params` with step `h`.
///
/// Each scalar is perturbed in turn on a private copy; `loss_fn` must be
/// deterministic.
pub fn finite_difference_gradients<T, P, F>(mut loss_fn: F, params: &P, h: T) -> Result<P>
where
    T: Scalar,
    P: ParamStore<T>,
    F: FnMut(&P) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let two_h = h + h;
    let lengths = params.shapes();
    for (t, &len) in lengths.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + h;
            let up = loss_fn(&probe)?;
            probe.tensors_mut()[t][i] = orig - h;
            let down = loss_fn(&probe)?;
            probe.tensors_mut()[t][i] = orig;
            grads.tensors_mut()[t][i] = (up - down) / two_h;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = finite_difference_gradients(|p: &Vec<f64>| Ok(0.5 * p[0] * p[0]), &vec![3.0], 1e-4)
            .unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn halving_step_shrinks_error() {
        let f = |p: &Vec<f64>| Ok(p[0].exp() * p[0].sin());
        let x = 0.7f64;
        let exact = x.exp() * (x.sin() + x.cos());
        let e1 = (finite_difference_gradients(f, &vec![x], 1e-2).unwrap()[0] - exact).abs();
        let e2 = (finite_difference_gradients(f, &vec![x], 5e-3).unwrap()[0] - exact).abs();
        assert!(e2 < e1);
        // second-order method: roughly a 4x reduction
        assert!(e1 / e2 > 3.0, "{}", e1 / e2);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let r = finite_difference_gradients(|p: &Vec<f64>| Ok(p[0]), &vec![1.0], 0.0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}

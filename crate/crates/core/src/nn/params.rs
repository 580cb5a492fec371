use crate::Scalar;

/// A bundle of learnable arrays visited in a fixed order.
///
/// The same type doubles as its own gradient bundle: a gradient is a value of
/// the parameter type whose entries hold partial derivatives. Adam and the
/// finite-difference oracle only rely on the flattened views.
pub trait ParamStore<T: Scalar>: Clone {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn shapes(&self) -> Vec<usize> {
        self.tensors().iter().map(|t| t.len()).collect()
    }

    fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    fn scale(&mut self, k: T) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= k;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn is_all_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| *v == T::zero()))
    }
}

/// A value that backpropagation treats as a constant.
///
/// Importance weights computed from the model's own predictions are wrapped in
/// this marker so that no gradient flows through them.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct StopGrad<T>(T);

impl<T: Copy> StopGrad<T> {
    pub fn new(value: T) -> Self {
        StopGrad(value)
    }

    pub fn get(self) -> T {
        self.0
    }
}

/// Largest element-wise relative error between two bundles.
///
/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps exact zeros from
/// producing spurious blow-ups.
pub fn max_relative_error<T: Scalar, P: ParamStore<T>>(a: &P, b: &P, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (ta, tb) in a.tensors().into_iter().zip(b.tensors()) {
        for (&x, &y) in ta.iter().zip(tb) {
            let (x, y) = (x.as_f64(), y.as_f64());
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}

impl<T: Scalar> ParamStore<T> for Vec<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![self.as_mut_slice()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_store_helpers() {
        let mut a = vec![1.0f64, -2.0];
        let b = vec![0.5f64, 0.5];
        a.add_assign(&b);
        assert_eq!(a, vec![1.5, -1.5]);
        a.scale(2.0);
        assert_eq!(a, vec![3.0, -3.0]);
        assert!(a.zeros_like().is_all_zero());
        assert_eq!(a.num_scalars(), 2);
    }

    #[test]
    fn relative_error_uses_floor() {
        let a = vec![0.0f64, 1.0];
        let b = vec![1e-12f64, 1.0 + 1e-6];
        let e = max_relative_error(&a, &b, 1e-8);
        assert!(e < 2e-4, "{e}");
    }
}

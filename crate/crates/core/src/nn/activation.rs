use ndarray::{Array2, ArrayView2, Zip};

use crate::Scalar;

/// Slope used on the negative side when none is configured.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu<T: Scalar>(z: ArrayView2<T>, slope: T) -> Array2<T> {
    z.mapv(|v| if v > T::zero() { v } else { slope * v })
}

pub fn leaky_relu_backward<T: Scalar>(
    dout: ArrayView2<T>,
    pre_activation: ArrayView2<T>,
    slope: T,
) -> Array2<T> {
    let mut dz = dout.to_owned();
    Zip::from(&mut dz)
        .and(&pre_activation)
        .for_each(|d, &z| {
            if z <= T::zero() {
                *d *= slope;
            }
        });
    dz
}

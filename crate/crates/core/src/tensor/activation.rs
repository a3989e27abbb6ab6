use super::{FeatureMap, Scalar};
use crate::Result;

#[inline]
fn logistic<T: Scalar>(x: T) -> T {
    // split on sign so exp never overflows
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Elementwise logistic function. Outputs lie in (0, 1) until the input
/// saturates the float format.
pub fn sigmoid<T: Scalar>(input: &FeatureMap<T>) -> FeatureMap<T> {
    input.map(logistic)
}

/// Backward of [`sigmoid`] given its forward output `s`: `grad · s · (1 − s)`.
pub fn sigmoid_backward<T: Scalar>(output: &FeatureMap<T>, grad_out: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    super::same_shape("sigmoid_backward", output.shape(), grad_out.shape())?;
    let data = output.data().iter().zip(grad_out.data()).map(|(&s, &g)| g * s * (T::one() - s)).collect();
    FeatureMap::from_vec(output.shape(), data)
}

pub fn relu<T: Scalar>(input: &FeatureMap<T>) -> FeatureMap<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of [`relu`]; `reference` may be either the relu input or its
/// output since both are positive at exactly the same cells. The
/// subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(reference: &FeatureMap<T>, grad_out: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    super::same_shape("relu_backward", reference.shape(), grad_out.shape())?;
    let data = reference
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    FeatureMap::from_vec(reference.shape(), data)
}

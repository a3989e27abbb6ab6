use super::{FeatureMap, Scalar, Shape};
use crate::{Error, Result};

/// Nearest-neighbour 2× upsampling: each pixel becomes a 2×2 block.
pub fn upsample2x<T: Scalar>(input: &FeatureMap<T>) -> FeatureMap<T> {
    let s = input.shape();
    let out_shape = Shape::new(s.channels, s.height * 2, s.width * 2);
    let mut out = Vec::with_capacity(out_shape.len());
    for c in 0..s.channels {
        let plane = input.channel(c);
        for y in 0..out_shape.height {
            let row = &plane[(y / 2) * s.width..(y / 2 + 1) * s.width];
            for &v in row {
                out.push(v);
                out.push(v);
            }
        }
    }
    FeatureMap::from_vec(out_shape, out).expect("upsampled length matches shape")
}

/// Backward of [`upsample2x`]: sums each 2×2 block of the gradient.
pub fn upsample2x_backward<T: Scalar>(grad_out: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let s = grad_out.shape();
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
        return Err(Error::shape("upsample2x_backward", format!("odd gradient size {s}")));
    }
    let out_shape = Shape::new(s.channels, s.height / 2, s.width / 2);
    Ok(FeatureMap::from_fn(out_shape, |c, y, x| {
        grad_out.get(c, 2 * y, 2 * x)
            + grad_out.get(c, 2 * y, 2 * x + 1)
            + grad_out.get(c, 2 * y + 1, 2 * x)
            + grad_out.get(c, 2 * y + 1, 2 * x + 1)
    }))
}

fn check_multiply(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    let spatial = a.height == b.height && a.width == b.width;
    if spatial && (a.channels == b.channels || b.channels == 1) {
        Ok(())
    } else {
        Err(Error::shape(op, format!("cannot multiply {a} by {b}")))
    }
}

/// Elementwise product, or `b` (one channel) broadcast across `a`'s channels.
pub fn multiply<T: Scalar>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    check_multiply("multiply", a.shape(), b.shape())?;
    let plane = a.shape().plane();
    let data = if a.channels() == b.channels() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect()
    } else {
        a.data().chunks_exact(plane).flat_map(|ch| ch.iter().zip(b.data()).map(|(&x, &y)| x * y)).collect()
    };
    FeatureMap::from_vec(a.shape(), data)
}

/// Backward of [`multiply`]: `(grad · b, grad · a)`, the second summed over
/// the broadcast axis when `b` has one channel.
pub fn multiply_backward<T: Scalar>(
    a: &FeatureMap<T>,
    b: &FeatureMap<T>,
    grad: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    check_multiply("multiply_backward", a.shape(), b.shape())?;
    super::same_shape("multiply_backward", a.shape(), grad.shape())?;
    let grad_a = multiply(grad, b)?;
    let grad_b = if a.channels() == b.channels() {
        multiply(grad, a)?
    } else {
        let plane = a.shape().plane();
        let mut gb = FeatureMap::zeros(b.shape());
        for (ga, aa) in grad.data().chunks_exact(plane).zip(a.data().chunks_exact(plane)) {
            for ((o, &g), &x) in gb.data_mut().iter_mut().zip(ga).zip(aa) {
                *o = *o + g * x;
            }
        }
        gb
    };
    Ok((grad_a, grad_b))
}

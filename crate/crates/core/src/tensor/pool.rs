use super::{FeatureMap, Scalar, Shape};
use crate::{Error, Result};

/// Flat input index of the winning cell for every output cell of a
/// [`maxpool2x2`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Shape,
    argmax: Vec<u32>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.argmax
    }
}

/// Non-overlapping 2×2 max pooling with stride 2.
///
/// Ties go to the first cell in row-major order within the block.
pub fn maxpool2x2<T: Scalar>(input: &FeatureMap<T>) -> Result<(FeatureMap<T>, PoolIndices)> {
    let s = input.shape();
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
        return Err(Error::shape("maxpool2x2", format!("odd spatial size {s}")));
    }
    let out_shape = Shape::new(s.channels, s.height / 2, s.width / 2);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    let data = input.data();
    for c in 0..s.channels {
        for oy in 0..out_shape.height {
            for ox in 0..out_shape.width {
                let base = input.index(c, 2 * oy, 2 * ox);
                let cells = [base, base + 1, base + s.width, base + s.width + 1];
                let mut best = cells[0];
                for &i in &cells[1..] {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((FeatureMap::from_vec(out_shape, out)?, PoolIndices { input_shape: s, argmax }))
}

/// Routes each output gradient to the recorded argmax cell.
pub fn maxpool2x2_backward<T: Scalar>(grad_out: &FeatureMap<T>, indices: &PoolIndices) -> Result<FeatureMap<T>> {
    if grad_out.shape().len() != indices.argmax.len() {
        return Err(Error::shape(
            "maxpool2x2_backward",
            format!("gradient {} for {} pooled cells", grad_out.shape(), indices.argmax.len()),
        ));
    }
    let mut grad = FeatureMap::zeros(indices.input_shape);
    let g = grad.data_mut();
    for (&i, &v) in indices.argmax.iter().zip(grad_out.data()) {
        g[i as usize] = g[i as usize] + v;
    }
    Ok(grad)
}

/// Per-pixel mean (channel 0) and max (channel 1) across channels.
pub fn channel_pool<T: Scalar>(input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let s = input.shape();
    if s.channels == 0 {
        return Err(Error::shape("channel_pool", "input has no channels"));
    }
    let plane = s.plane();
    let mut out = FeatureMap::zeros(Shape::new(2, s.height, s.width));
    let inv = T::one() / T::from_usize(s.channels).expect("channel count fits");
    {
        let (mean, max) = out.data_mut().split_at_mut(plane);
        mean.copy_from_slice(input.channel(0));
        max.copy_from_slice(input.channel(0));
        for c in 1..s.channels {
            for ((m, x), &v) in mean.iter_mut().zip(max.iter_mut()).zip(input.channel(c)) {
                *m = *m + v;
                if v > *x {
                    *x = v;
                }
            }
        }
        for m in mean.iter_mut() {
            *m = *m * inv;
        }
    }
    Ok(out)
}

/// Backward of [`channel_pool`]. The mean gradient spreads evenly; the max
/// gradient goes to the first channel attaining the maximum.
pub fn channel_pool_backward<T: Scalar>(input: &FeatureMap<T>, grad_out: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let s = input.shape();
    super::same_shape("channel_pool_backward", Shape::new(2, s.height, s.width), grad_out.shape())?;
    if s.channels == 0 {
        return Err(Error::shape("channel_pool_backward", "input has no channels"));
    }
    let plane = s.plane();
    let inv = T::one() / T::from_usize(s.channels).expect("channel count fits");
    let (g_mean, g_max) = grad_out.data().split_at(plane);
    let mut grad = FeatureMap::zeros(s);
    for c in 0..s.channels {
        for (g, &gm) in grad.channel_mut(c).iter_mut().zip(g_mean) {
            *g = gm * inv;
        }
    }
    let data = input.data();
    let g = grad.data_mut();
    for p in 0..plane {
        let mut best = p;
        for c in 1..s.channels {
            if data[c * plane + p] > data[best] {
                best = c * plane + p;
            }
        }
        g[best] = g[best] + g_max[p];
    }
    Ok(grad)
}

use super::{FeatureActivation, NetworkWeights, PoolSource};
use crate::loss::Heatmap;
use crate::tensor::{
    channel_pool, channel_pool_backward, conv2d, conv2d_backward, ensure_finite, maxpool2x2, maxpool2x2_backward,
    multiply, multiply_backward, relu, relu_backward, sigmoid, sigmoid_backward, upsample2x, upsample2x_backward,
    ConvKernel, FeatureMap, PoolIndices, Scalar,
};
use crate::{Error, Result};

/// Basic spatial attention: `A = sigmoid(conv(channel_pool(F)))`,
/// `R = F ⊙ A` with `A` broadcast over channels.
pub fn spatial_attention<T: Scalar>(
    features: &FeatureMap<T>,
    kernel: &ConvKernel<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    let pooled = channel_pool(features)?;
    let attention = sigmoid(&conv2d(&pooled, kernel)?);
    let refined = multiply(features, &attention)?;
    Ok((attention, refined))
}

/// Gradients of [`spatial_attention`] given upstream gradients for both of
/// its outputs. Returns `(grad_features, grad_kernel)`.
pub fn spatial_attention_backward<T: Scalar>(
    features: &FeatureMap<T>,
    kernel: &ConvKernel<T>,
    attention: &FeatureMap<T>,
    grad_attention: &FeatureMap<T>,
    grad_refined: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, ConvKernel<T>)> {
    let (mut grad_features, grad_a) = multiply_backward(features, attention, grad_refined)?;
    let mut total_a = grad_attention.clone();
    total_a.add_assign(&grad_a)?;
    let pooled = channel_pool(features)?;
    let grad_logits = sigmoid_backward(attention, &total_a)?;
    let conv = conv2d_backward(&pooled, kernel, &grad_logits)?;
    grad_features.add_assign(&channel_pool_backward(features, &conv.input)?)?;
    Ok((grad_features, conv.kernel))
}

/// Intermediates of one scale needed by the backward pass.
#[derive(Clone, Debug)]
struct ScaleCache<T> {
    input: FeatureMap<T>,
    hidden: FeatureMap<T>,
    features: FeatureMap<T>,
    pooled: FeatureMap<T>,
    core: FeatureMap<T>,
    delta: FeatureMap<T>,
    core_up: FeatureMap<T>,
    delta_up: FeatureMap<T>,
    pool: Option<PoolIndices>,
}

/// Everything [`backward`] needs from a [`forward`] call.
#[derive(Clone, Debug)]
pub struct ForwardCache<T = f32> {
    scales: Vec<ScaleCache<T>>,
    activation: FeatureActivation,
    pool_source: PoolSource,
    upsamplings: [usize; 2],
}

impl<T: Scalar> ForwardCache<T> {
    /// Core (`delta = false`) or delta attention maps at their native scale,
    /// finest first.
    pub fn attention_maps(&self, delta: bool) -> Vec<&FeatureMap<T>> {
        self.scales.iter().map(|s| if delta { &s.delta } else { &s.core }).collect()
    }

    /// Upsampling operations applied to the (core, delta) channel.
    pub fn upsample_counts(&self) -> [usize; 2] {
        self.upsamplings
    }
}

/// Fused probability maps for the two kinds of singular point.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput<T = f32> {
    pub core: Heatmap<T>,
    pub delta: Heatmap<T>,
}

fn activate<T: Scalar>(x: FeatureMap<T>, act: FeatureActivation) -> FeatureMap<T> {
    match act {
        FeatureActivation::Relu => relu(&x),
        FeatureActivation::Identity => x,
    }
}

fn activate_backward<T: Scalar>(
    output: &FeatureMap<T>,
    grad: FeatureMap<T>,
    act: FeatureActivation,
) -> Result<FeatureMap<T>> {
    match act {
        FeatureActivation::Relu => relu_backward(output, &grad),
        FeatureActivation::Identity => Ok(grad),
    }
}

fn checked_conv<T: Scalar>(input: &FeatureMap<T>, kernel: &ConvKernel<T>, layer: String) -> Result<FeatureMap<T>> {
    let out = conv2d(input, kernel)?;
    ensure_finite(&out, layer)?;
    Ok(out)
}

fn upsample_times<T: Scalar>(map: &FeatureMap<T>, times: usize, counter: &mut usize) -> FeatureMap<T> {
    let mut out = map.clone();
    for _ in 0..times {
        out = upsample2x(&out);
        *counter += 1;
    }
    out
}

fn fuse<T: Scalar>(maps: &[&FeatureMap<T>]) -> Result<FeatureMap<T>> {
    let mut fused = maps[0].clone();
    for m in &maps[1..] {
        fused = multiply(&fused, m)?;
    }
    Ok(fused)
}

/// Runs the network on a `C×H×W` image with `H` and `W` multiples of 16.
pub fn forward<T: Scalar>(
    image: &FeatureMap<T>,
    weights: &NetworkWeights<T>,
) -> Result<(NetworkOutput<T>, ForwardCache<T>)> {
    let config = weights.config();
    let shape = image.shape();
    let div = config.size_divisor();
    if shape.channels != config.input_channels {
        return Err(Error::shape(
            "forward",
            format!("image has {} channels, network expects {}", shape.channels, config.input_channels),
        ));
    }
    if shape.height == 0 || shape.width == 0 || !shape.height.is_multiple_of(div) || !shape.width.is_multiple_of(div) {
        return Err(Error::shape(
            "forward",
            format!("image {}x{} is not a nonzero multiple of {div}", shape.height, shape.width),
        ));
    }

    let act = config.feature_activation;
    let mut upsamplings = [0usize; 2];
    let mut scales = Vec::with_capacity(config.scales);
    let mut input = image.clone();
    for s in 0..config.scales {
        let hidden = activate(checked_conv(&input, &weights.features[2 * s], format!("feature.{}", 2 * s + 1))?, act);
        let features =
            activate(checked_conv(&hidden, &weights.features[2 * s + 1], format!("feature.{}", 2 * s + 2))?, act);
        let pooled = channel_pool(&features)?;
        let core = sigmoid(&checked_conv(&pooled, &weights.core_attention[s], format!("core_attention.{}", s + 1))?);
        let delta = sigmoid(&checked_conv(&pooled, &weights.delta_attention[s], format!("delta_attention.{}", s + 1))?);

        let (next, pool) = if s + 1 < config.scales {
            let refined = match config.pool_source {
                PoolSource::Core => multiply(&features, &core)?,
                PoolSource::Averaged => {
                    let mut r = multiply(&features, &core)?;
                    r.add_assign(&multiply(&features, &delta)?)?;
                    r.scale(T::from_f64_lossy(0.5));
                    r
                }
            };
            let (next, idx) = maxpool2x2(&refined)?;
            (Some(next), Some(idx))
        } else {
            (None, None)
        };

        let core_up = upsample_times(&core, s, &mut upsamplings[0]);
        let delta_up = upsample_times(&delta, s, &mut upsamplings[1]);
        let cache = ScaleCache {
            input: std::mem::replace(&mut input, FeatureMap::zeros(Default::default())),
            hidden,
            features,
            pooled,
            core,
            delta,
            core_up,
            delta_up,
            pool,
        };
        scales.push(cache);
        if let Some(next) = next {
            input = next;
        }
    }

    let core = fuse(&scales.iter().map(|s| &s.core_up).collect::<Vec<_>>())?;
    let delta = fuse(&scales.iter().map(|s| &s.delta_up).collect::<Vec<_>>())?;
    ensure_finite(&core, "fused.core")?;
    ensure_finite(&delta, "fused.delta")?;
    let output = NetworkOutput { core: Heatmap::from_feature_map(core)?, delta: Heatmap::from_feature_map(delta)? };
    Ok((output, ForwardCache { scales, activation: act, pool_source: config.pool_source, upsamplings }))
}

/// Forward pass without keeping the cache.
pub fn infer<T: Scalar>(image: &FeatureMap<T>, weights: &NetworkWeights<T>) -> Result<NetworkOutput<T>> {
    forward(image, weights).map(|(out, _)| out)
}

/// Gradient of `∏ maps` with respect to each factor, brought back to each
/// factor's native resolution.
fn fused_grads<T: Scalar>(grad: &FeatureMap<T>, ups: &[&FeatureMap<T>]) -> Result<Vec<FeatureMap<T>>> {
    let n = ups.len();
    // prefix[i] = ∏_{j<i}, suffix[i] = ∏_{j>i}
    let mut prefix = Vec::with_capacity(n);
    let mut acc = FeatureMap::filled(grad.shape(), T::one());
    for u in ups {
        prefix.push(acc.clone());
        acc = multiply(&acc, u)?;
    }
    let mut suffix = vec![FeatureMap::filled(grad.shape(), T::one()); n];
    for i in (0..n.saturating_sub(1)).rev() {
        suffix[i] = multiply(&suffix[i + 1], ups[i + 1])?;
    }
    let mut out = Vec::with_capacity(n);
    for (i, (p, s)) in prefix.iter().zip(&suffix).enumerate() {
        let mut g = multiply(&multiply(grad, p)?, s)?;
        for _ in 0..i {
            g = upsample2x_backward(&g)?;
        }
        out.push(g);
    }
    Ok(out)
}

/// Parameter gradients of `⟨grad_core, P_core⟩ + ⟨grad_delta, P_delta⟩`.
pub fn backward<T: Scalar>(
    cache: &ForwardCache<T>,
    weights: &NetworkWeights<T>,
    grad_core: &Heatmap<T>,
    grad_delta: &Heatmap<T>,
) -> Result<NetworkWeights<T>> {
    let full = cache.scales[0].core_up.shape();
    for g in [grad_core, grad_delta] {
        if g.height() != full.height || g.width() != full.width {
            return Err(Error::shape(
                "backward",
                format!("gradient map {}x{} for output {}x{}", g.height(), g.width(), full.height, full.width),
            ));
        }
    }
    let mut grads = weights.zeros_like();
    let core_ups: Vec<_> = cache.scales.iter().map(|s| &s.core_up).collect();
    let delta_ups: Vec<_> = cache.scales.iter().map(|s| &s.delta_up).collect();
    let d_core = fused_grads(&grad_core.to_feature_map(), &core_ups)?;
    let d_delta = fused_grads(&grad_delta.to_feature_map(), &delta_ups)?;

    let mut grad_next: Option<FeatureMap<T>> = None;
    for (s, sc) in cache.scales.iter().enumerate().rev() {
        let mut grad_a_core = d_core[s].clone();
        let mut grad_a_delta = d_delta[s].clone();
        let mut grad_features = FeatureMap::zeros(sc.features.shape());

        if let (Some(g), Some(idx)) = (grad_next.take(), &sc.pool) {
            let grad_refined = maxpool2x2_backward(&g, idx)?;
            match cache.pool_source {
                PoolSource::Core => {
                    let (gf, ga) = multiply_backward(&sc.features, &sc.core, &grad_refined)?;
                    grad_features.add_assign(&gf)?;
                    grad_a_core.add_assign(&ga)?;
                }
                PoolSource::Averaged => {
                    let mut half = grad_refined;
                    half.scale(T::from_f64_lossy(0.5));
                    let (gf, ga) = multiply_backward(&sc.features, &sc.core, &half)?;
                    grad_features.add_assign(&gf)?;
                    grad_a_core.add_assign(&ga)?;
                    let (gf, ga) = multiply_backward(&sc.features, &sc.delta, &half)?;
                    grad_features.add_assign(&gf)?;
                    grad_a_delta.add_assign(&ga)?;
                }
            }
        }

        let core_conv =
            conv2d_backward(&sc.pooled, &weights.core_attention[s], &sigmoid_backward(&sc.core, &grad_a_core)?)?;
        let delta_conv =
            conv2d_backward(&sc.pooled, &weights.delta_attention[s], &sigmoid_backward(&sc.delta, &grad_a_delta)?)?;
        grads.core_attention[s] = core_conv.kernel;
        grads.delta_attention[s] = delta_conv.kernel;
        let mut grad_pooled = core_conv.input;
        grad_pooled.add_assign(&delta_conv.input)?;
        grad_features.add_assign(&channel_pool_backward(&sc.features, &grad_pooled)?)?;

        let grad_z2 = activate_backward(&sc.features, grad_features, cache.activation)?;
        let conv2 = conv2d_backward(&sc.hidden, &weights.features[2 * s + 1], &grad_z2)?;
        grads.features[2 * s + 1] = conv2.kernel;
        let grad_z1 = activate_backward(&sc.hidden, conv2.input, cache.activation)?;
        let conv1 = conv2d_backward(&sc.input, &weights.features[2 * s], &grad_z1)?;
        grads.features[2 * s] = conv1.kernel;
        if s > 0 {
            grad_next = Some(conv1.input);
        }
    }
    Ok(grads)
}

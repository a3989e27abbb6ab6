//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls the code path it is checking.

#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rose_core::loss::Heatmap;
use rose_core::net::{
    backward, forward, init_weights, spatial_attention, spatial_attention_backward, NetworkConfig, NetworkWeights,
};
use rose_core::synth::OrientationField;
use rose_core::tensor::*;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Worst relative error between `analytic` and central differences of `f`
/// around `x`, probing every entry.
pub fn worst_fd_error(x: &[f64], analytic: &[f64], step: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * step)));
    }
    worst
}

pub fn random_map(rng: &mut ChaCha8Rng, shape: Shape) -> FeatureMap<f64> {
    FeatureMap::from_fn(shape, |_, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_kernel(rng: &mut ChaCha8Rng, o: usize, i: usize, k: usize) -> ConvKernel<f64> {
    let weights = (0..o * i * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ConvKernel::from_parts(o, i, k, k, weights, bias).unwrap()
}

pub fn dot(a: &FeatureMap<f64>, b: &FeatureMap<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with_data(shape: Shape, data: &[f64]) -> FeatureMap<f64> {
    FeatureMap::from_vec(shape, data.to_vec()).unwrap()
}

/// Worst central-difference error of each operator's backward pass on small
/// random inputs (step 1e-5, f64). Max pooling and relu inputs are kept away
/// from ties and kinks.
pub fn operator_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let shape = Shape::new(2, 6, 6);
    let input = random_map(&mut rng, shape);
    let kernel = random_kernel(&mut rng, 3, 2, 3);
    let up = random_map(&mut rng, Shape::new(3, 6, 6));
    let g = conv2d_backward(&input, &kernel, &up).unwrap();
    let e_in = worst_fd_error(input.data(), g.input.data(), STEP, |x| {
        dot(&conv2d(&with_data(shape, x), &kernel).unwrap(), &up)
    });
    let e_w = worst_fd_error(&kernel.weights, &g.kernel.weights, STEP, |w| {
        let k = ConvKernel::from_parts(3, 2, 3, 3, w.to_vec(), kernel.bias.clone()).unwrap();
        dot(&conv2d(&input, &k).unwrap(), &up)
    });
    let e_b = worst_fd_error(&kernel.bias, &g.kernel.bias, STEP, |b| {
        let k = ConvKernel::from_parts(3, 2, 3, 3, kernel.weights.clone(), b.to_vec()).unwrap();
        dot(&conv2d(&input, &k).unwrap(), &up)
    });
    out.push(("conv2d", e_in.max(e_w).max(e_b)));

    let shape = Shape::new(2, 8, 8);
    let mut values: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.01).collect();
    for i in (1..values.len()).rev() {
        values.swap(i, rng.gen_range(0..=i));
    }
    let input = with_data(shape, &values);
    let (_, idx) = maxpool2x2(&input).unwrap();
    let up = random_map(&mut rng, Shape::new(2, 4, 4));
    let g = maxpool2x2_backward(&up, &idx).unwrap();
    out.push((
        "maxpool2x2",
        worst_fd_error(input.data(), g.data(), STEP, |x| dot(&maxpool2x2(&with_data(shape, x)).unwrap().0, &up)),
    ));

    let shape = Shape::new(3, 5, 5);
    let input = random_map(&mut rng, shape).map(|v| 4.0 * v);
    let up = random_map(&mut rng, shape);
    let g = sigmoid_backward(&sigmoid(&input), &up).unwrap();
    out.push(("sigmoid", worst_fd_error(input.data(), g.data(), STEP, |x| dot(&sigmoid(&with_data(shape, x)), &up))));

    let input = random_map(&mut rng, shape).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let g = relu_backward(&input, &up).unwrap();
    out.push(("relu", worst_fd_error(input.data(), g.data(), STEP, |x| dot(&relu(&with_data(shape, x)), &up))));

    let input = random_map(&mut rng, shape);
    let up2 = random_map(&mut rng, Shape::new(2, 5, 5));
    let g = channel_pool_backward(&input, &up2).unwrap();
    out.push((
        "channel_pool",
        worst_fd_error(input.data(), g.data(), STEP, |x| dot(&channel_pool(&with_data(shape, x)).unwrap(), &up2)),
    ));

    let small = Shape::new(2, 4, 3);
    let input = random_map(&mut rng, small);
    let up = random_map(&mut rng, Shape::new(2, 8, 6));
    let g = upsample2x_backward(&up).unwrap();
    out.push((
        "upsample2x",
        worst_fd_error(input.data(), g.data(), STEP, |x| dot(&upsample2x(&with_data(small, x)), &up)),
    ));

    let (sa, sb) = (Shape::new(3, 4, 4), Shape::new(1, 4, 4));
    let a = random_map(&mut rng, sa);
    let b = random_map(&mut rng, sb);
    let up = random_map(&mut rng, sa);
    let (ga, gb) = multiply_backward(&a, &b, &up).unwrap();
    let e_a = worst_fd_error(a.data(), ga.data(), STEP, |x| dot(&multiply(&with_data(sa, x), &b).unwrap(), &up));
    let e_b = worst_fd_error(b.data(), gb.data(), STEP, |x| dot(&multiply(&a, &with_data(sb, x)).unwrap(), &up));
    out.push(("multiply", e_a.max(e_b)));

    let shape = Shape::new(3, 8, 8);
    let features = random_map(&mut rng, shape);
    let kernel = random_kernel(&mut rng, 1, 2, 5);
    let up_a = random_map(&mut rng, Shape::new(1, 8, 8));
    let up_r = random_map(&mut rng, shape);
    let objective = |f: &FeatureMap<f64>, k: &ConvKernel<f64>| {
        let (a, r) = spatial_attention(f, k).unwrap();
        dot(&a, &up_a) + dot(&r, &up_r)
    };
    let (attention, _) = spatial_attention(&features, &kernel).unwrap();
    let (gf, gk) = spatial_attention_backward(&features, &kernel, &attention, &up_a, &up_r).unwrap();
    let e_w = worst_fd_error(&kernel.weights, &gk.weights, STEP, |w| {
        objective(&features, &ConvKernel::from_parts(1, 2, 5, 5, w.to_vec(), kernel.bias.clone()).unwrap())
    });
    let e_b = worst_fd_error(&kernel.bias, &gk.bias, STEP, |b| {
        objective(&features, &ConvKernel::from_parts(1, 2, 5, 5, kernel.weights.clone(), b.to_vec()).unwrap())
    });
    let e_f = worst_fd_error(features.data(), gf.data(), STEP, |x| objective(&with_data(shape, x), &kernel));
    out.push(("spatial_attention", e_w.max(e_b).max(e_f)));
    out
}

/// Full-network gradient check in f64: random image and random upstream
/// maps, `samples` random entries (plus the first) per parameter tensor.
/// Returns the worst relative error and where it occurred.
pub fn network_gradient_check(config: &NetworkConfig, size: usize, samples: usize, seed: u64) -> (f64, String, usize) {
    const STEP: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = init_weights::<f64>(config, seed).unwrap();
    for slice in weights.slices_mut() {
        for v in slice.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let image = FeatureMap::from_fn(Shape::new(1, size, size), |_, _, _| rng.gen::<f64>());
    let mut upstream =
        || Heatmap::from_vec(size, size, (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let (g_core, g_delta) = (upstream(), upstream());
    let objective = |w: &NetworkWeights<f64>| {
        let (out, _) = forward(&image, w).unwrap();
        let d = |a: &Heatmap<f64>, b: &Heatmap<f64>| a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>();
        d(&out.core, &g_core) + d(&out.delta, &g_delta)
    };

    let (_, cache) = forward(&image, &weights).unwrap();
    let grads = backward(&cache, &weights, &g_core, &g_delta).unwrap();
    let analytic = grads.tensors();
    let mut worst = (0.0f64, String::new());
    let mut tensors = 0;
    for (t, tensor) in analytic.iter().enumerate() {
        tensors += 1;
        let len = tensor.values.len();
        let mut picks: Vec<usize> = (0..samples).map(|_| rng.gen_range(0..len)).collect();
        picks.push(0);
        for i in picks {
            let mut plus = weights.clone();
            plus.slices_mut()[t][i] += STEP;
            let mut minus = weights.clone();
            minus.slices_mut()[t][i] -= STEP;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * STEP);
            let err = rel_err(tensor.values[i], numeric);
            if err > worst.0 {
                worst = (err, format!("{}[{i}]", tensor.name));
            }
        }
    }
    (worst.0, worst.1, tensors)
}

/// Quadratic-time suppression: scan the whole map for the largest live value
/// (first in row-major order on ties), keep it, kill its disk, repeat.
pub fn brute_force_nms(map: &Heatmap<f32>, radius: f64, min_value: f64) -> Vec<(usize, usize, f32)> {
    let w = map.width();
    let mut alive: Vec<bool> = map.values().iter().map(|&v| v as f64 >= min_value).collect();
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for (i, &live) in alive.iter().enumerate() {
            if live && best.is_none_or(|b| map.values()[i] > map.values()[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        let (row, col) = (b / w, b % w);
        kept.push((col, row, map.values()[b]));
        for (i, live) in alive.iter_mut().enumerate() {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            if (r - row as f64).powi(2) + (c - col as f64).powi(2) <= radius * radius {
                *live = false;
            }
        }
    }
    kept
}

/// Poincaré index of the orientation field along the square of half-side
/// `half` centred on `(cx, cy)`, walked counter-clockwise as seen with y up.
pub fn poincare_index(field: &OrientationField, cx: usize, cy: usize, half: usize) -> f64 {
    let (x0, x1, y0, y1) = (cx - half, cx + half, cy - half, cy + half);
    // image rows grow downward, so counter-clockwise (y up) runs along the
    // bottom edge left to right, then up the right edge
    let mut path = Vec::new();
    for x in x0..x1 {
        path.push((x, y1));
    }
    for y in (y0 + 1..=y1).rev() {
        path.push((x1, y));
    }
    for x in (x0 + 1..=x1).rev() {
        path.push((x, y0));
    }
    for y in y0..y1 {
        path.push((x0, y));
    }
    let mut total = 0.0;
    for i in 0..path.len() {
        let (a, b) = (path[i], path[(i + 1) % path.len()]);
        let mut d = field.at(b.0, b.1) - field.at(a.0, a.1);
        while d > PI / 2.0 {
            d -= PI;
        }
        while d <= -PI / 2.0 {
            d += PI;
        }
        total += d;
    }
    total / (2.0 * PI)
}

/// Smallest angle between two undirected orientations.
pub fn orientation_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Fraction of `block`×`block` tiles whose structure-tensor ridge orientation
/// lies within `tolerance` radians of the mean planted orientation. Tiles
/// whose centre is closer than `exclusion` px to a singular point are
/// skipped, as are tiles touching the image border.
pub fn structure_tensor_agreement(
    pixels: &[u8],
    size: usize,
    field: &OrientationField,
    singular: &[[f64; 2]],
    block: usize,
    exclusion: f64,
    tolerance: f64,
) -> (f64, usize) {
    let px = |x: usize, y: usize| pixels[y * size + x] as f64;
    let (mut agree, mut total) = (0usize, 0usize);
    for by in (block..size - block).step_by(block) {
        for bx in (block..size - block).step_by(block) {
            let (ccx, ccy) = (bx as f64 + block as f64 / 2.0, by as f64 + block as f64 / 2.0);
            if singular.iter().any(|p| (p[0] - ccx).hypot(p[1] - ccy) < exclusion) {
                continue;
            }
            let (mut gxx, mut gyy, mut gxy) = (0.0, 0.0, 0.0);
            let (mut sin2, mut cos2) = (0.0, 0.0);
            for y in by..by + block {
                for x in bx..bx + block {
                    // Sobel with y pointing up
                    let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                        - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
                    let gy = (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1))
                        - (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1));
                    gxx += gx * gx;
                    gyy += gy * gy;
                    gxy += gx * gy;
                    let t = field.at(x, y);
                    sin2 += (2.0 * t).sin();
                    cos2 += (2.0 * t).cos();
                }
            }
            // dominant gradient direction is normal to the ridges
            let normal = 0.5 * (2.0 * gxy).atan2(gxx - gyy);
            let measured = (normal + PI / 2.0).rem_euclid(PI);
            let planted = (0.5 * sin2.atan2(cos2)).rem_euclid(PI);
            total += 1;
            if orientation_gap(measured, planted) <= tolerance {
                agree += 1;
            }
        }
    }
    (agree as f64 / total.max(1) as f64, total)
}

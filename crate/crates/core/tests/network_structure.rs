use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rose_core::loss::Heatmap;
use rose_core::net::{backward, forward, infer, init_weights, NetworkConfig, NetworkWeights};
use rose_core::tensor::{FeatureMap, Shape};

fn random_image(size: usize, seed: u64) -> FeatureMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::from_fn(Shape::new(1, size, size), |_, _, _| rng.gen())
}

fn random_heatmap(size: usize, seed: u64) -> Heatmap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Heatmap::from_vec(size, size, (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn all_zero(values: &[f64]) -> bool {
    values.iter().all(|v| *v == 0.0)
}

#[test]
fn attention_pyramid_halves_per_scale() {
    let config = NetworkConfig::compact();
    let weights = init_weights::<f32>(&config, 5).unwrap();
    let image = random_image(256, 1).cast::<f32>();
    let (out, cache) = forward(&image, &weights).unwrap();
    for delta in [false, true] {
        let sides: Vec<(usize, usize)> = cache.attention_maps(delta).iter().map(|m| (m.height(), m.width())).collect();
        assert_eq!(sides, vec![(256, 256), (128, 128), (64, 64), (32, 32), (16, 16)]);
    }
    assert_eq!(cache.upsample_counts(), [10, 10]);
    assert_eq!((out.core.height(), out.core.width()), (256, 256));
}

#[test]
fn forward_is_pure() {
    let config = NetworkConfig::compact();
    let weights = init_weights::<f64>(&config, 9).unwrap();
    let image = random_image(32, 2);
    let a = infer(&image, &weights).unwrap();
    let b = infer(&image, &weights).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fused_maps_lie_strictly_inside_unit_interval() {
    let weights = init_weights::<f32>(&NetworkConfig::compact(), 4).unwrap();
    let out = infer(&random_image(64, 3).cast::<f32>(), &weights).unwrap();
    for v in out.core.values().iter().chain(out.delta.values()) {
        assert!(*v > 0.0 && *v < 1.0, "{v}");
    }
}

fn gradients(weights: &NetworkWeights<f64>, core: bool, delta: bool) -> NetworkWeights<f64> {
    let image = random_image(32, 6);
    let (_, cache) = forward(&image, weights).unwrap();
    let zero = Heatmap::zeros(32, 32);
    let g_core = if core { random_heatmap(32, 7) } else { zero.clone() };
    let g_delta = if delta { random_heatmap(32, 8) } else { zero };
    backward(&cache, weights, &g_core, &g_delta).unwrap()
}

#[test]
fn core_loss_never_reaches_delta_attention() {
    let weights = init_weights::<f64>(&NetworkConfig::compact(), 3).unwrap();
    let grads = gradients(&weights, true, false);
    for k in &grads.delta_attention {
        assert!(all_zero(&k.weights) && all_zero(&k.bias));
    }
    for k in grads.core_attention.iter().chain(&grads.features) {
        assert!(!all_zero(&k.weights));
    }

    // and perturbing a delta attention kernel leaves the core map untouched
    let image = random_image(32, 6);
    let before = infer(&image, &weights).unwrap();
    let mut nudged = weights.clone();
    nudged.delta_attention[2].weights[7] += 0.5;
    let after = infer(&image, &nudged).unwrap();
    assert_eq!(before.core, after.core);
    assert_ne!(before.delta, after.delta);
}

#[test]
fn delta_loss_reaches_shared_path_only() {
    let weights = init_weights::<f64>(&NetworkConfig::compact(), 3).unwrap();
    let grads = gradients(&weights, false, true);
    for k in grads.delta_attention.iter().chain(&grads.features) {
        assert!(!all_zero(&k.weights));
    }
    // core attention at scales 1..4 gates the features pooled into the next
    // scale; the last one feeds nothing but the core map
    for k in &grads.core_attention[..4] {
        assert!(!all_zero(&k.weights));
    }
    assert!(all_zero(&grads.core_attention[4].weights));
    assert!(all_zero(&grads.core_attention[4].bias));
}

#[test]
fn gradients_add_across_heads() {
    let weights = init_weights::<f64>(&NetworkConfig::compact(), 12).unwrap();
    let both = gradients(&weights, true, true);
    let mut parts = gradients(&weights, true, false);
    parts.add_assign(&gradients(&weights, false, true)).unwrap();
    for (a, b) in both.tensors().iter().zip(parts.tensors()) {
        for (x, y) in a.values.iter().zip(b.values) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{}: {x} vs {y}", a.name);
        }
    }
}

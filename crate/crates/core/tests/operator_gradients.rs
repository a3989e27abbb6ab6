//! Central-difference checks for every operator backward pass, in f64.

mod oracles;

use oracles::{dot, random_kernel, random_map, worst_fd_error};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rose_core::tensor::*;

const TOL: f64 = 1e-4;

fn with_data(shape: Shape, data: &[f64]) -> FeatureMap<f64> {
    FeatureMap::from_vec(shape, data.to_vec()).unwrap()
}

#[test]
fn every_operator_backward_matches_central_differences() {
    for seed in 0..3 {
        for (op, err) in oracles::operator_gradient_errors(seed) {
            assert!(err < TOL, "{op}: rel err {err:e} (seed {seed})");
        }
    }
}

#[test]
fn maxpool_routes_to_one_cell_per_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = random_map(&mut rng, Shape::new(2, 8, 8));
    let (_, indices) = maxpool2x2(&input).unwrap();
    let upstream = FeatureMap::filled(Shape::new(2, 4, 4), 1.0);
    let grad = maxpool2x2_backward(&upstream, &indices).unwrap();
    assert_eq!(grad.data().iter().filter(|v| **v != 0.0).count(), 32);
    assert_eq!(grad.sum(), 32.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv2d_gradients_hold_for_random_shapes(
        seed in any::<u64>(),
        in_ch in 1usize..=3,
        out_ch in 1usize..=3,
        h in 1usize..=8,
        w in 1usize..=8,
        half in 0usize..=2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 2 * half + 1;
        let shape = Shape::new(in_ch, h, w);
        let input = random_map(&mut rng, shape);
        let kernel = random_kernel(&mut rng, out_ch, in_ch, k);
        let upstream = random_map(&mut rng, Shape::new(out_ch, h, w));
        let grads = conv2d_backward(&input, &kernel, &upstream).unwrap();
        let err = worst_fd_error(input.data(), grads.input.data(), 1e-5, |x| {
            dot(&conv2d(&with_data(shape, x), &kernel).unwrap(), &upstream)
        });
        prop_assert!(err < TOL, "input rel err {err:e}");
        let err = worst_fd_error(&kernel.weights, &grads.kernel.weights, 1e-5, |wt| {
            let kk = ConvKernel::from_parts(out_ch, in_ch, k, k, wt.to_vec(), kernel.bias.clone()).unwrap();
            dot(&conv2d(&input, &kk).unwrap(), &upstream)
        });
        prop_assert!(err < TOL, "weight rel err {err:e}");
    }

    #[test]
    fn conv2d_matches_direct_loops(
        seed in any::<u64>(),
        in_ch in 1usize..=3,
        out_ch in 1usize..=4,
        h in 1usize..=8,
        w in 1usize..=8,
        half in 0usize..=2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 2 * half + 1;
        let input = random_map(&mut rng, Shape::new(in_ch, h, w));
        let kernel = random_kernel(&mut rng, out_ch, in_ch, k);
        let out = conv2d(&input, &kernel).unwrap();
        for o in 0..out_ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = kernel.bias[o];
                    for i in 0..in_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - half as isize;
                                let sx = x as isize + kx as isize - half as isize;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    acc += kernel.weight(o, i, ky, kx) * input.get(i, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    prop_assert!((out.get(o, y, x) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn upsample_then_backward_scales_by_four(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = random_map(&mut rng, Shape::new(1, h, w));
        let back = upsample2x_backward(&upsample2x(&map)).unwrap();
        for (a, b) in back.data().iter().zip(map.data()) {
            prop_assert!((a - 4.0 * b).abs() < 1e-12);
        }
    }
}

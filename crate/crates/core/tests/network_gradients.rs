//! Finite-difference check of the full network backward pass in double
//! precision.

mod oracles;

use rose_core::net::NetworkConfig;

#[test]
fn every_parameter_tensor_matches_central_differences() {
    let (worst, at, tensors) = oracles::network_gradient_check(&NetworkConfig::default(), 32, 6, 2024);
    assert_eq!(tensors, 40);
    assert!(worst < 1e-3, "worst relative error {worst:.3e} at {at}");
}

#[test]
fn averaged_pooling_gradients_match_too() {
    let config =
        rose_core::net::NetworkConfig { pool_source: rose_core::net::PoolSource::Averaged, ..NetworkConfig::compact() };
    let (worst, at, _) = oracles::network_gradient_check(&config, 32, 6, 7);
    assert!(worst < 1e-3, "worst relative error {worst:.3e} at {at}");
}

//! The three-channel singular point network.
//!
//! A VGG-style extractor (five scales of two 3×3 convolutions each) feeds two
//! multi-scale spatial attention channels, one for cores and one for deltas.
//! At every scale a single-filter 5×5 sigmoid convolution over the
//! channel-wise mean/max of the features yields an attention map; the core
//! channel's refined features (features × attention) are what the extractor
//! pools into the next scale. Each channel's five attention maps are brought
//! back to input resolution with nearest-neighbour upsampling and multiplied
//! together into a probability map.

mod io;
mod model;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{ConvKernel, Scalar};
use crate::{Error, Result};

pub use io::{
    infer_config, load_weights, load_weights_inferred, read_weights, save_weights, write_weights, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};
pub use model::{backward, forward, infer, spatial_attention, spatial_attention_backward, ForwardCache, NetworkOutput};

/// Kernel size of the feature extractor convolutions.
pub const FEATURE_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureActivation {
    Relu,
    /// No nonlinearity after the extractor convolutions (ablation).
    Identity,
}

/// Which refined maps feed the extractor's max-pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    /// Core attention channel only.
    Core,
    /// Mean of the core and delta refined maps.
    Averaged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    /// Filters of the ten extractor convolutions, two per scale.
    pub feature_widths: Vec<usize>,
    pub attention_kernel: usize,
    pub scales: usize,
    pub feature_activation: FeatureActivation,
    pub pool_source: PoolSource,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_channels: 1,
            feature_widths: vec![32, 32, 64, 64, 128, 128, 256, 256, 512, 512],
            attention_kernel: 5,
            scales: 5,
            feature_activation: FeatureActivation::Relu,
            pool_source: PoolSource::Core,
        }
    }
}

impl NetworkConfig {
    /// Same topology with different extractor widths (one per scale).
    pub fn with_scale_widths(widths: [usize; 5]) -> Self {
        NetworkConfig { feature_widths: widths.iter().flat_map(|&w| [w, w]).collect(), ..Self::default() }
    }

    /// Extractor widths 8/16/32/32/64. Unlike the full-width network it
    /// stays out of sigmoid saturation when trained with Adam at lr 0.01.
    pub fn compact() -> Self {
        Self::with_scale_widths([8, 16, 32, 32, 64])
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales != 5 {
            return Err(Error::Config(format!("the network has 5 scales, got {}", self.scales)));
        }
        if self.feature_widths.len() != 2 * self.scales {
            return Err(Error::Config(format!(
                "expected {} feature widths, got {}",
                2 * self.scales,
                self.feature_widths.len()
            )));
        }
        if self.feature_widths.chunks(2).any(|p| p[0] != p[1]) {
            return Err(Error::Config("feature widths must come in equal pairs".into()));
        }
        if self.input_channels == 0 || self.feature_widths.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.attention_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("attention kernel must be odd, got {}", self.attention_kernel)));
        }
        Ok(())
    }

    /// Input sides must be multiples of this (one halving per pooling).
    pub fn size_divisor(&self) -> usize {
        1 << (self.scales - 1)
    }

    fn feature_shape(&self, i: usize) -> [usize; 4] {
        let input = if i == 0 { self.input_channels } else { self.feature_widths[i - 1] };
        [self.feature_widths[i], input, FEATURE_KERNEL, FEATURE_KERNEL]
    }

    fn attention_shape(&self) -> [usize; 4] {
        [1, 2, self.attention_kernel, self.attention_kernel]
    }
}

/// Every learnable parameter, in the fixed order used by the weights file:
/// ten extractor kernels, five core attention kernels, five delta attention
/// kernels, each as weight then bias.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights<T = f32> {
    config: NetworkConfig,
    pub features: Vec<ConvKernel<T>>,
    pub core_attention: Vec<ConvKernel<T>>,
    pub delta_attention: Vec<ConvKernel<T>>,
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a [T],
}

fn kernel_of<T: Scalar>(dims: [usize; 4]) -> ConvKernel<T> {
    ConvKernel::zeros(dims[0], dims[1], dims[2], dims[3])
}

impl<T: Scalar> NetworkWeights<T> {
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(NetworkWeights {
            config: config.clone(),
            features: (0..2 * config.scales).map(|i| kernel_of(config.feature_shape(i))).collect(),
            core_attention: (0..config.scales).map(|_| kernel_of(config.attention_shape())).collect(),
            delta_attention: (0..config.scales).map(|_| kernel_of(config.attention_shape())).collect(),
        })
    }

    /// Zero tensors with this network's shapes.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config was validated on construction")
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Kernels in file order with their name prefixes.
    pub fn kernels(&self) -> impl Iterator<Item = (String, &ConvKernel<T>)> {
        let f = self.features.iter().enumerate().map(|(i, k)| (format!("feature.{}", i + 1), k));
        let c = self.core_attention.iter().enumerate().map(|(i, k)| (format!("core_attention.{}", i + 1), k));
        let d = self.delta_attention.iter().enumerate().map(|(i, k)| (format!("delta_attention.{}", i + 1), k));
        f.chain(c).chain(d)
    }

    fn kernels_mut(&mut self) -> impl Iterator<Item = &mut ConvKernel<T>> {
        self.features.iter_mut().chain(self.core_attention.iter_mut()).chain(self.delta_attention.iter_mut())
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::with_capacity(40);
        for (prefix, k) in self.kernels() {
            out.push(TensorRef {
                name: format!("{prefix}.weight"),
                dims: k.weight_dims().to_vec(),
                values: &k.weights,
            });
            out.push(TensorRef { name: format!("{prefix}.bias"), dims: vec![k.out_channels], values: &k.bias });
        }
        out
    }

    /// Mutable parameter slices in the same order as [`Self::tensors`].
    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(40);
        for k in self.kernels_mut() {
            out.push(k.weights.as_mut_slice());
            out.push(k.bias.as_mut_slice());
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|t| t.name).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(Error::shape("NetworkWeights::add_assign", "different network configs"));
        }
        let others = other.tensors();
        for (dst, src) in self.slices_mut().into_iter().zip(others) {
            for (a, &b) in dst.iter_mut().zip(src.values) {
                *a = *a + b;
            }
        }
        Ok(())
    }

    /// Name of the first tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors().into_iter().find(|t| t.values.iter().any(|v| !v.is_finite())).map(|t| t.name)
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            config: self.config.clone(),
            features: self.features.iter().map(ConvKernel::cast).collect(),
            core_attention: self.core_attention.iter().map(ConvKernel::cast).collect(),
            delta_attention: self.delta_attention.iter().map(ConvKernel::cast).collect(),
        }
    }
}

/// Uniform fan-in initialization: weights in `±sqrt(6 / fan_in)`, zero biases.
pub fn init_weights<T: Scalar>(config: &NetworkConfig, seed: u64) -> Result<NetworkWeights<T>> {
    let mut weights = NetworkWeights::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new_inclusive(-1.0f64, 1.0);
    for k in weights.kernels_mut() {
        let bound = T::from_f64_lossy((6.0 / k.fan_in() as f64).sqrt());
        for w in &mut k.weights {
            // |u| <= 1, so the rounded product never exceeds the bound
            *w = T::from_f64_lossy(unit.sample(&mut rng)) * bound;
        }
    }
    Ok(weights)
}

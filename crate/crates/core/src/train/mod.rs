//! Deterministic mini-batch training with Adam.

mod adam;
mod dataset;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::loss::{gaussian_heatmap, vfocal_loss, vfocal_loss_grad, Heatmap, HeatmapConfig};
use crate::net::{backward, forward, init_weights, save_weights, NetworkConfig, NetworkWeights};
use crate::tensor::FeatureMap;
use crate::{Error, Result};

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use dataset::{
    load_annotations, load_dataset, load_sample, parse_annotations, write_annotations, AnnotationRecord, Sample,
    SIZE_MULTIPLE,
};

/// Stream offset separating the shuffling generator from weight init.
const SHUFFLE_STREAM: u64 = 0x5eed_5eed;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub heatmap: HeatmapConfig,
    pub adam: AdamConfig,
    pub network: NetworkConfig,
    /// Save a checkpoint every this many optimizer steps (0 disables).
    pub checkpoint_interval: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub shuffle: bool,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            seed: 0,
            heatmap: HeatmapConfig::default(),
            adam: AdamConfig::default(),
            network: NetworkConfig::default(),
            checkpoint_interval: 0,
            checkpoint_path: None,
            shuffle: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        self.heatmap.validate()?;
        self.network.validate()
    }
}

/// Ground-truth heatmaps for one image.
#[derive(Clone, Debug)]
pub struct Targets {
    pub core: Heatmap<f32>,
    pub delta: Heatmap<f32>,
}

impl Targets {
    pub fn for_sample(sample: &Sample, config: &HeatmapConfig) -> Result<Self> {
        let (h, w) = (sample.image.height(), sample.image.width());
        Ok(Targets {
            core: gaussian_heatmap(&sample.record.cores, h, w, config)?,
            delta: gaussian_heatmap(&sample.record.deltas, h, w, config)?,
        })
    }
}

/// Loss (core + delta) and parameter gradients for a single image.
pub fn image_gradient(
    weights: &NetworkWeights<f32>,
    image: &FeatureMap<f32>,
    targets: &Targets,
    heatmap: &HeatmapConfig,
) -> Result<(f64, NetworkWeights<f32>)> {
    let (out, cache) = forward(image, weights)?;
    let loss = vfocal_loss(&targets.core, &out.core, heatmap)? + vfocal_loss(&targets.delta, &out.delta, heatmap)?;
    let grad_core = vfocal_loss_grad(&targets.core, &out.core, heatmap)?;
    let grad_delta = vfocal_loss_grad(&targets.delta, &out.delta, heatmap)?;
    let grads = backward(&cache, weights, &grad_core, &grad_delta)?;
    Ok((loss, grads))
}

/// Summed gradient and mean loss over a batch. Images may be processed in
/// parallel; the sum is always taken in batch order.
pub fn batch_gradient(
    weights: &NetworkWeights<f32>,
    batch: &[(&FeatureMap<f32>, &Targets)],
    heatmap: &HeatmapConfig,
) -> Result<(f64, NetworkWeights<f32>)> {
    let per_image: Vec<_> = batch
        .par_iter()
        .map(|(image, targets)| image_gradient(weights, image, targets, heatmap))
        .collect::<Result<_>>()?;
    let mut total = weights.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &per_image {
        loss += l;
        total.add_assign(g)?;
    }
    Ok((loss / batch.len() as f64, total))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: NetworkWeights<f32>,
    /// Mean per-image loss of every optimizer step, in order.
    pub losses: Vec<f64>,
}

pub fn train(dataset: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, config, |_, _| {})
}

/// Trains from a seeded initialization, calling `on_step(step, loss)` after
/// every optimizer step (steps count from 1).
pub fn train_with(
    dataset: &[Sample],
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let targets: Vec<Targets> =
        dataset.iter().map(|s| Targets::for_sample(s, &config.heatmap)).collect::<Result<_>>()?;

    let mut weights = init_weights::<f32>(&config.network, config.seed)?;
    let mut state = AdamState::new(&weights, config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::new();

    'epochs: for _ in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| losses.len() >= m) {
                break 'epochs;
            }
            let step = losses.len() + 1;
            let batch: Vec<_> = chunk.iter().map(|&i| (&dataset[i].image, &targets[i])).collect();
            let (loss, grads) = batch_gradient(&weights, &batch, &config.heatmap)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch: step });
            }
            adam_step(&mut weights, &grads, &mut state)?;
            losses.push(loss);
            on_step(step, loss);
            if let Some(path) = &config.checkpoint_path {
                if config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0 {
                    save_weights(&weights, path)?;
                }
            }
        }
    }
    Ok(TrainOutcome { weights, losses })
}

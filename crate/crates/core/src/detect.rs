//! End-to-end inference: pad, run the network, extract peaks.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{nms, ImageDetections, PointKind, DEFAULT_NMS_MIN, DEFAULT_NMS_RADIUS};
use crate::image::{pad_to_multiple, GrayImage};
use crate::net::{infer, NetworkWeights};
use crate::tensor::FeatureMap;
use crate::train::{Sample, SIZE_MULTIPLE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmsParams {
    pub radius: f64,
    pub min_value: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams { radius: DEFAULT_NMS_RADIUS, min_value: DEFAULT_NMS_MIN }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Config(format!("NMS radius must be non-negative, got {}", self.radius)));
        }
        if !(0.0..=1.0).contains(&self.min_value) {
            return Err(Error::Config(format!("NMS minimum must lie in [0, 1], got {}", self.min_value)));
        }
        Ok(())
    }
}

/// Read-only detector; safe to share across threads.
#[derive(Clone, Debug)]
pub struct Detector {
    weights: NetworkWeights<f32>,
    nms: NmsParams,
}

impl Detector {
    pub fn new(weights: NetworkWeights<f32>, nms: NmsParams) -> Result<Self> {
        nms.validate()?;
        Ok(Detector { weights, nms })
    }

    pub fn weights(&self) -> &NetworkWeights<f32> {
        &self.weights
    }

    /// Detects on an already padded `[0, 1]` image. Points falling in the
    /// padding (outside `original_width × original_height`) are dropped.
    /// `time_ms` covers the forward pass and NMS.
    pub fn detect_map(
        &self,
        image: &FeatureMap<f32>,
        original_width: usize,
        original_height: usize,
    ) -> Result<ImageDetections> {
        let start = Instant::now();
        let out = infer(image, &self.weights)?;
        let mut points = nms(&out.core, self.nms.radius, self.nms.min_value, PointKind::Core);
        points.extend(nms(&out.delta, self.nms.radius, self.nms.min_value, PointKind::Delta));
        let time_ms = start.elapsed().as_secs_f64() * 1e3;
        points.retain(|p| p.x < original_width as f64 && p.y < original_height as f64);
        Ok(ImageDetections { points, time_ms })
    }

    /// Runs [`Self::detect_map`] on every sample, fanning out across
    /// threads. Results keep the sample order.
    pub fn detect_samples(&self, samples: &[Sample]) -> Result<Vec<ImageDetections>> {
        samples.par_iter().map(|s| self.detect_map(&s.image, s.original_width, s.original_height)).collect()
    }

    pub fn detect(&self, image: &GrayImage) -> Result<ImageDetections> {
        let padded = pad_to_multiple(&image.to_feature_map(), SIZE_MULTIPLE);
        self.detect_map(&padded, image.width, image.height)
    }
}

//! Synthetic fingerprints with planted singular points.
//!
//! Orientation follows the zero-pole model: each core adds `½·arg(z − c)`
//! and each delta subtracts `½·arg(z − d)` on top of a constant background
//! orientation. Ridges are grown from seeded noise by repeatedly applying a
//! Gabor filter tuned to the local orientation and ridge frequency.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::GrayImage;
use crate::tensor::FeatureMap;
use crate::train::{write_annotations, AnnotationRecord, SIZE_MULTIPLE};
use crate::{Error, Result};

/// Minimum distance between any two planted points.
pub const MIN_POINT_SPACING: f64 = 48.0;
/// Largest distance kept between planted points and the image border.
pub const MAX_BORDER_MARGIN: usize = 48;

const ORIENTATION_BINS: usize = 64;
const GABOR_ITERATIONS: usize = 8;
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Side of the square image; a multiple of 16.
    pub size: usize,
    pub n_cores: usize,
    pub n_deltas: usize,
    /// Cycles per pixel.
    pub ridge_frequency: f64,
    /// Amplitude of additive uniform noise, in [0, 1].
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { size: 128, n_cores: 1, n_deltas: 1, ridge_frequency: 0.1, noise_level: 0.05, seed: 0 }
    }
}

impl SynthSpec {
    /// Planted points keep this far from every border: 48 px, reduced to a
    /// quarter of the side on small images.
    pub fn border_margin(&self) -> usize {
        MAX_BORDER_MARGIN.min(self.size / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(SIZE_MULTIPLE) {
            return Err(Error::Config(format!(
                "image size must be a positive multiple of {SIZE_MULTIPLE}, got {}",
                self.size
            )));
        }
        if self.n_cores > 2 || self.n_deltas > 2 {
            return Err(Error::Config("at most two cores and two deltas".into()));
        }
        if !(self.ridge_frequency > 0.0 && self.ridge_frequency < 0.5) {
            return Err(Error::Config(format!("ridge frequency must lie in (0, 0.5), got {}", self.ridge_frequency)));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!("noise level must lie in [0, 1], got {}", self.noise_level)));
        }
        Ok(())
    }

    fn check_points(&self, cores: &[[f64; 2]], deltas: &[[f64; 2]]) -> Result<()> {
        let m = self.border_margin() as f64;
        let hi = (self.size - 1) as f64 - m;
        let all: Vec<_> = cores.iter().chain(deltas).collect();
        for &&[x, y] in &all {
            if x < m || y < m || x > hi || y > hi {
                return Err(Error::Config(format!("point ({x}, {y}) is closer than {m} px to the border")));
            }
        }
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if (a[0] - b[0]).hypot(a[1] - b[1]) < MIN_POINT_SPACING {
                    return Err(Error::Config(format!(
                        "points ({}, {}) and ({}, {}) are closer than {MIN_POINT_SPACING} px",
                        a[0], a[1], b[0], b[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-pixel ridge orientation in `[0, π)`, measured counter-clockwise from
/// the +x axis with y pointing up.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationField {
    pub width: usize,
    pub height: usize,
    pub theta: Vec<f64>,
}

impl OrientationField {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.theta[y * self.width + x]
    }
}

/// Zero-pole orientation at pixel `(x, y)` before the singularity guard.
pub fn zero_pole_orientation(x: f64, y: f64, cores: &[[f64; 2]], deltas: &[[f64; 2]], background: f64) -> f64 {
    // image rows grow downwards, so flip dy to measure angles with y up
    let arg = |p: &[f64; 2]| (p[1] - y).atan2(x - p[0]);
    let theta = background + 0.5 * cores.iter().map(arg).sum::<f64>() - 0.5 * deltas.iter().map(arg).sum::<f64>();
    theta.rem_euclid(PI)
}

/// Orientation at every pixel. A pixel that coincides with a planted point
/// takes the value of its horizontal neighbour.
pub fn orientation_field(
    cores: &[[f64; 2]],
    deltas: &[[f64; 2]],
    background: f64,
    height: usize,
    width: usize,
) -> OrientationField {
    let singular = |x: f64, y: f64| cores.iter().chain(deltas).any(|p| p[0] == x && p[1] == y);
    let mut theta = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (mut fx, fy) = (x as f64, y as f64);
            if singular(fx, fy) {
                fx = if x + 1 < width { fx + 1.0 } else { fx - 1.0 };
            }
            theta.push(zero_pole_orientation(fx, fy, cores, deltas, background));
        }
    }
    OrientationField { width, height, theta }
}

/// Zero-mean Gabor kernels for `ORIENTATION_BINS` orientations.
struct GaborBank {
    radius: usize,
    kernels: Vec<Vec<f64>>,
}

impl GaborBank {
    fn new(frequency: f64) -> Self {
        let sigma = 0.4 / frequency;
        let radius = (2.5 * sigma).ceil() as usize;
        let side = 2 * radius + 1;
        let kernels = (0..ORIENTATION_BINS)
            .map(|b| {
                let theta = (b as f64 + 0.5) * PI / ORIENTATION_BINS as f64;
                // ridge direction in (column, row) is (cos θ, −sin θ); the normal is (sin θ, cos θ)
                let (s, c) = theta.sin_cos();
                let mut k = Vec::with_capacity(side * side);
                for dy in -(radius as i64)..=radius as i64 {
                    for dx in -(radius as i64)..=radius as i64 {
                        let (dx, dy) = (dx as f64, dy as f64);
                        let across = dx * s + dy * c;
                        let r2 = dx * dx + dy * dy;
                        k.push((-r2 / (2.0 * sigma * sigma)).exp() * (2.0 * PI * frequency * across).cos());
                    }
                }
                let mean = k.iter().sum::<f64>() / k.len() as f64;
                k.iter_mut().for_each(|v| *v -= mean);
                k
            })
            .collect();
        GaborBank { radius, kernels }
    }

    fn bin(theta: f64) -> usize {
        ((theta.rem_euclid(PI) / PI * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1)
    }

    fn apply(&self, src: &[f64], bins: &[usize], size: usize) -> Vec<f64> {
        let r = self.radius as i64;
        let side = 2 * self.radius + 1;
        let n = size as i64;
        let mut out = vec![0.0; size * size];
        for y in 0..n {
            for x in 0..n {
                let k = &self.kernels[bins[(y * n + x) as usize]];
                let mut acc = 0.0;
                for ky in 0..side as i64 {
                    let sy = (y + ky - r).clamp(0, n - 1);
                    let row = &src[(sy * n) as usize..((sy + 1) * n) as usize];
                    let krow = &k[ky as usize * side..(ky as usize + 1) * side];
                    for (kx, &w) in krow.iter().enumerate() {
                        let sx = (x + kx as i64 - r).clamp(0, n - 1);
                        acc += w * row[sx as usize];
                    }
                }
                out[(y * n + x) as usize] = acc;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    /// Quantized image as written to disk.
    pub pixels: GrayImage,
    /// Same pixels scaled to [0, 1].
    pub image: FeatureMap<f32>,
    pub field: OrientationField,
    pub annotation: AnnotationRecord,
}

/// Core and delta positions, in that order.
type PlacedPoints = (Vec<[f64; 2]>, Vec<[f64; 2]>);

fn place_points(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<PlacedPoints> {
    let m = spec.border_margin();
    let coord = Uniform::new_inclusive(m, spec.size - 1 - m);
    let total = spec.n_cores + spec.n_deltas;
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(total);
    let mut attempts = 0;
    while points.len() < total {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(Error::Config(format!(
                "cannot place {total} points {MIN_POINT_SPACING} px apart in a {0}x{0} image",
                spec.size
            )));
        }
        let p = [coord.sample(rng) as f64, coord.sample(rng) as f64];
        if points.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= MIN_POINT_SPACING) {
            points.push(p);
        }
    }
    let deltas = points.split_off(spec.n_cores);
    Ok((points, deltas))
}

/// Renders an image with randomly placed points drawn from `spec.seed`.
pub fn render(spec: &SynthSpec, image_name: &str) -> Result<SynthSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (cores, deltas) = place_points(spec, &mut rng)?;
    render_points(spec, &cores, &deltas, image_name, &mut rng)
}

/// Renders an image with the given points, which must respect the border
/// margin and spacing rules.
pub fn render_with_points(
    spec: &SynthSpec,
    cores: &[[f64; 2]],
    deltas: &[[f64; 2]],
    image_name: &str,
) -> Result<SynthSample> {
    spec.validate()?;
    if cores.len() > 2 || deltas.len() > 2 {
        return Err(Error::Config("at most two cores and two deltas".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    render_points(spec, cores, deltas, image_name, &mut rng)
}

fn render_points(
    spec: &SynthSpec,
    cores: &[[f64; 2]],
    deltas: &[[f64; 2]],
    image_name: &str,
    rng: &mut ChaCha8Rng,
) -> Result<SynthSample> {
    spec.check_points(cores, deltas)?;
    let size = spec.size;
    let background = rng.gen_range(0.0..PI);
    let field = orientation_field(cores, deltas, background, size, size);
    let bins: Vec<usize> = field.theta.iter().map(|&t| GaborBank::bin(t)).collect();
    let bank = GaborBank::new(spec.ridge_frequency);

    let unit = Uniform::new_inclusive(-1.0f64, 1.0);
    let mut ridges: Vec<f64> = (0..size * size).map(|_| unit.sample(rng)).collect();
    for _ in 0..GABOR_ITERATIONS {
        let filtered = bank.apply(&ridges, &bins, size);
        let rms = (filtered.iter().map(|v| v * v).sum::<f64>() / filtered.len() as f64).sqrt();
        let scale = if rms > 0.0 { 2.0 / rms } else { 0.0 };
        ridges = filtered.iter().map(|v| (v * scale).tanh()).collect();
    }
    let values: Vec<f64> = ridges.iter().map(|&r| 0.5 + 0.45 * r + spec.noise_level * 0.5 * unit.sample(rng)).collect();
    let pixels = GrayImage::from_unit(size, size, &values);
    Ok(SynthSample {
        image: pixels.to_feature_map(),
        pixels,
        field,
        annotation: AnnotationRecord { image: image_name.to_string(), cores: cores.to_vec(), deltas: deltas.to_vec() },
    })
}

/// Name of the annotation file written by [`generate_dataset`].
pub const ANNOTATION_FILE: &str = "annotations.json";

pub fn image_file_name(index: usize) -> String {
    format!("synth_{index:05}.pgm")
}

/// Writes `count` PGM images and `annotations.json` into `out_dir`. Image
/// `i` is rendered from seed `seed + i`.
pub fn generate_dataset(
    count: usize,
    template: &SynthSpec,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<AnnotationRecord>> {
    template.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let spec = SynthSpec { seed: seed.wrapping_add(i as u64), ..template.clone() };
        let name = image_file_name(i);
        let sample = render(&spec, &name)?;
        let path = out_dir.join(&name);
        fs::write(&path, sample.pixels.encode_pgm()).map_err(|e| Error::io(&path, e))?;
        records.push(sample.annotation);
    }
    write_annotations(&records, out_dir.join(ANNOTATION_FILE))?;
    Ok(records)
}

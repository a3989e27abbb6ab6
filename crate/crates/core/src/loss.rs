//! Gaussian heatmap targets and the penalty-reduced focal loss.
//!
//! With `p` the clamped prediction and `y` the target, the per-pixel terms are
//!
//! ```text
//! y == 1 : (1 - p)^2 · ln p
//! else   : (1 - y)^4 · p^2 · ln(1 - p)
//! ```
//!
//! summed over the map and scaled by `-1 / N`, where `N` is the number of
//! pixels whose target is exactly one (at least one).

use serde::{Deserialize, Serialize};

use crate::tensor::{FeatureMap, Scalar, Shape};
use crate::{Error, Result};

/// Single-channel map indexed by (row, column), values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T = f32> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> Heatmap<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, v: T) -> Self {
        Heatmap { height, width, values: vec![v; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("Heatmap::from_vec", format!("{} values for {height}x{width}", values.len())));
        }
        Ok(Heatmap { height, width, values })
    }

    pub fn from_feature_map(map: FeatureMap<T>) -> Result<Self> {
        let s = map.shape();
        if s.channels != 1 {
            return Err(Error::shape("Heatmap::from_feature_map", format!("{s} is not single-channel")));
        }
        Self::from_vec(s.height, s.width, map.into_vec())
    }

    pub fn to_feature_map(&self) -> FeatureMap<T> {
        FeatureMap::from_vec(Shape::new(1, self.height, self.width), self.values.clone())
            .expect("heatmap length matches shape")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.values[row * self.width + col] = v;
    }

    pub fn cast<U: Scalar>(&self) -> Heatmap<U> {
        Heatmap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    /// Gaussian standard deviation in pixels.
    pub sigma: f64,
    /// Predictions are clamped to `[eps, 1 - eps]` before taking logs.
    pub clamp_epsilon: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        HeatmapConfig { sigma: 6.0, clamp_epsilon: 1e-6 }
    }
}

impl HeatmapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.clamp_epsilon > 0.0 && self.clamp_epsilon < 0.5) {
            return Err(Error::Config(format!("clamp epsilon must lie in (0, 0.5), got {}", self.clamp_epsilon)));
        }
        Ok(())
    }
}

/// Ground-truth map: each pixel takes the largest `exp(-d² / 2σ²)` over the
/// annotated points, `d` being the distance to the point's pixel. Points are
/// `[x, y]` (column, row) and are snapped to the nearest pixel so every
/// annotated pixel holds exactly 1.
pub fn gaussian_heatmap<T: Scalar>(
    points: &[[f64; 2]],
    height: usize,
    width: usize,
    config: &HeatmapConfig,
) -> Result<Heatmap<T>> {
    config.validate()?;
    let mut centres = Vec::with_capacity(points.len());
    for &[x, y] in points {
        if !(x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64) {
            return Err(Error::PointOutOfBounds { x, y, width, height });
        }
        let col = (x.round() as usize).min(width - 1);
        let row = (y.round() as usize).min(height - 1);
        centres.push((col as f64, row as f64));
    }
    let denom = 2.0 * config.sigma * config.sigma;
    let mut map = Heatmap::zeros(height, width);
    if centres.is_empty() {
        return Ok(map);
    }
    for row in 0..height {
        for col in 0..width {
            let nearest = centres
                .iter()
                .map(|&(cx, cy)| {
                    let (dx, dy) = (col as f64 - cx, row as f64 - cy);
                    dx * dx + dy * dy
                })
                .fold(f64::INFINITY, f64::min);
            map.set(row, col, T::from_f64_lossy((-nearest / denom).exp()));
        }
    }
    Ok(map)
}

fn check_pair<T: Scalar>(op: &'static str, y: &Heatmap<T>, yhat: &Heatmap<T>) -> Result<()> {
    if y.height != yhat.height || y.width != yhat.width {
        return Err(Error::shape(
            op,
            format!("target {}x{} vs prediction {}x{}", y.height, y.width, yhat.height, yhat.width),
        ));
    }
    Ok(())
}

fn target_count<T: Scalar>(y: &Heatmap<T>) -> f64 {
    y.values.iter().filter(|&&v| v == T::one()).count().max(1) as f64
}

/// Penalty-reduced focal loss of a prediction against a Gaussian target.
pub fn vfocal_loss<T: Scalar>(y: &Heatmap<T>, yhat: &Heatmap<T>, config: &HeatmapConfig) -> Result<f64> {
    check_pair("vfocal_loss", y, yhat)?;
    config.validate()?;
    let eps = config.clamp_epsilon;
    let n = target_count(y);
    let mut total = 0.0f64;
    for (&t, &p) in y.values.iter().zip(&yhat.values) {
        let p = p.to_f64().unwrap_or(f64::NAN).clamp(eps, 1.0 - eps);
        if t == T::one() {
            total += (1.0 - p).powi(2) * p.ln();
        } else {
            let t = t.to_f64().unwrap_or(f64::NAN);
            total += (1.0 - t).powi(4) * p * p * (-p).ln_1p();
        }
    }
    Ok(-total / n)
}

/// Analytic `∂L/∂ŷ` of [`vfocal_loss`]. Pixels whose prediction lies outside
/// the clamp range get zero gradient.
pub fn vfocal_loss_grad<T: Scalar>(y: &Heatmap<T>, yhat: &Heatmap<T>, config: &HeatmapConfig) -> Result<Heatmap<T>> {
    check_pair("vfocal_loss_grad", y, yhat)?;
    config.validate()?;
    let eps = config.clamp_epsilon;
    let n = target_count(y);
    let values = y
        .values
        .iter()
        .zip(&yhat.values)
        .map(|(&t, &p)| {
            let p = p.to_f64().unwrap_or(f64::NAN);
            if !(eps..=1.0 - eps).contains(&p) {
                return T::zero();
            }
            let g = if t == T::one() {
                2.0 * (1.0 - p) * p.ln() - (1.0 - p).powi(2) / p
            } else {
                let t = t.to_f64().unwrap_or(f64::NAN);
                -(1.0 - t).powi(4) * (2.0 * p * (-p).ln_1p() - p * p / (1.0 - p))
            };
            T::from_f64_lossy(g / n)
        })
        .collect();
    Heatmap::from_vec(y.height, y.width, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Heatmap<f64> {
        Heatmap::filled(1, 1, v)
    }

    #[test]
    fn peak_and_one_sigma_value() {
        let cfg = HeatmapConfig::default();
        let map = gaussian_heatmap::<f64>(&[[10.0, 10.0]], 32, 32, &cfg).unwrap();
        assert_eq!(map.get(10, 10), 1.0);
        // x = 16 is column 16
        assert!((map.get(10, 16) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((map.get(10, 16) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn coincident_points_equal_single_point() {
        let cfg = HeatmapConfig::default();
        let a = gaussian_heatmap::<f32>(&[[7.0, 3.0]], 16, 16, &cfg).unwrap();
        let b = gaussian_heatmap::<f32>(&[[7.0, 3.0], [7.0, 3.0]], 16, 16, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_points_give_zero_map() {
        let map = gaussian_heatmap::<f32>(&[], 8, 8, &HeatmapConfig::default()).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_bounds_point_is_named() {
        let err = gaussian_heatmap::<f32>(&[[8.0, 2.0]], 8, 8, &HeatmapConfig::default()).unwrap_err();
        assert!(matches!(err, Error::PointOutOfBounds { x, .. } if x == 8.0));
    }

    #[test]
    fn branch_spot_values() {
        let cfg = HeatmapConfig::default();
        let pos = vfocal_loss(&one(1.0), &one(0.5), &cfg).unwrap();
        let neg = vfocal_loss(&one(0.0), &one(0.5), &cfg).unwrap();
        let expected = -0.25 * 0.5f64.ln();
        assert!((pos - expected).abs() < 1e-12);
        assert!((neg - expected).abs() < 1e-12);
        assert!((pos - 0.17329).abs() < 1e-4);
    }

    #[test]
    fn positive_gradient_closed_form() {
        let cfg = HeatmapConfig::default();
        let g = vfocal_loss_grad(&one(1.0), &one(0.5), &cfg).unwrap().get(0, 0);
        let expected = 2.0 * 0.5 * 0.5f64.ln() - 0.25 / 0.5;
        assert!((g - expected).abs() < 1e-12);
    }

    #[test]
    fn clamped_pixels_get_no_gradient() {
        let cfg = HeatmapConfig::default();
        let g = vfocal_loss_grad(&one(0.0), &one(1.0), &cfg).unwrap();
        assert_eq!(g.get(0, 0), 0.0);
        let loss = vfocal_loss(&one(0.0), &one(1.0), &cfg).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let cfg = HeatmapConfig::default();
        let a = Heatmap::<f32>::zeros(2, 2);
        let b = Heatmap::<f32>::zeros(2, 3);
        assert!(vfocal_loss(&a, &b, &cfg).is_err());
        assert!(vfocal_loss_grad(&a, &b, &cfg).is_err());
    }
}

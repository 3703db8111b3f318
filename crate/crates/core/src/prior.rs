//! Distance-similarity fusion prior.
//!
//! For an annotated point `i` and pixel `j`:
//!
//! ```text
//! d_ij = |p_i - p_j| / sqrt(w^2 + h^2)
//! s_ij = |I(p_i) - I(p_j)|
//! w_d  = exp(-d_ij^2 / (2 sigma^2))      (1 at the annotated pixel)
//! w_s  = exp(-s_ij / (2 theta))          (1 at the annotated pixel)
//! D_ij = w_d * w_s
//! ```
//!
//! The four per-point maps are combined per pixel by [`Aggregation`].

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{Dims, FourPointAnnotation, ImageGrid, Point};

/// How the four per-point maps are merged into one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Aggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PriorConfig {
    /// Gaussian spread in units of the image diagonal.
    pub sigma: f64,
    /// Intensity similarity spread for intensities in `[0, 1]`.
    pub theta: f64,
    pub aggregation: Aggregation,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sigma: 0.2,
            theta: 0.25,
            aggregation: Aggregation::Max,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::NonPositiveSigma(self.sigma));
        }
        if !(self.theta > 0.0) {
            return Err(Error::NonPositiveTheta(self.theta));
        }
        Ok(())
    }
}

/// Row-major scalar field over an image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub dims: Dims,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.dims.width + x]
    }
}

/// Fused prior `D` with values in `(0, 1]`.
pub type PriorMap = ScalarField;

fn map_pixels(dims: Dims, mut f: impl FnMut(usize, usize) -> f64) -> ScalarField {
    let mut values = Vec::with_capacity(dims.len());
    for y in 0..dims.height {
        for x in 0..dims.width {
            values.push(f(x, y));
        }
    }
    ScalarField { dims, values }
}

pub fn distance_weight_map(point: Point, dims: Dims, sigma: f64) -> Result<ScalarField> {
    dims.check_point(point)?;
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let diag = dims.diagonal();
    let denom = 2.0 * sigma * sigma;
    let own = point.pixel();
    Ok(map_pixels(dims, |x, y| {
        if (x, y) == own {
            return 1.0;
        }
        let (dx, dy) = (point.x - x as f64, point.y - y as f64);
        let d = libm::sqrt(dx * dx + dy * dy) / diag;
        libm::exp(-(d * d) / denom)
    }))
}

pub fn similarity_weight_map(image: &ImageGrid, point: Point, theta: f64) -> Result<ScalarField> {
    image.dims().check_point(point)?;
    if !(theta > 0.0) {
        return Err(Error::NonPositiveTheta(theta));
    }
    let own = point.pixel();
    let reference = image.at_point(point);
    Ok(map_pixels(image.dims(), |x, y| {
        if (x, y) == own {
            return 1.0;
        }
        let s = libm::fabs(reference - image.get(x, y));
        libm::exp(-s / (2.0 * theta))
    }))
}

pub fn fusion_prior(
    image: &ImageGrid,
    annotation: &FourPointAnnotation,
    config: &PriorConfig,
) -> Result<PriorMap> {
    config.validate()?;
    annotation.check_within(image.dims())?;
    let mut per_point = Vec::with_capacity(4);
    for &p in annotation.points() {
        let wd = distance_weight_map(p, image.dims(), config.sigma)?;
        let ws = similarity_weight_map(image, p, config.theta)?;
        let fused: Vec<f64> = wd.values.iter().zip(&ws.values).map(|(a, b)| a * b).collect();
        per_point.push(fused);
    }
    let dims = image.dims();
    let values = (0..dims.len())
        .map(|j| match config.aggregation {
            Aggregation::Max => per_point.iter().map(|m| m[j]).fold(0.0, f64::max),
            Aggregation::Mean => per_point.iter().map(|m| m[j]).sum::<f64>() / 4.0,
        })
        .collect();
    Ok(ScalarField { dims, values })
}

//! Synthetic ultrasound-like phantoms with ground truth and simulated annotations.
//!
//! A nodule is an ellipse whose boundary radius is modulated by low-order
//! Fourier modes. The image is a piecewise-constant echo map (background,
//! hypoechoic nodule, optional dark distractor blobs) multiplied by unit-mean
//! gamma speckle, Gaussian-blurred and clamped to `[0, 1]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Dims, FourPointAnnotation, ImageGrid, Point};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PhantomConfig {
    /// Square image side, divisible by 4.
    pub size: usize,
    /// Range of the ellipse semi-axes, in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Peak boundary modulation as a fraction of the radius.
    pub perturbation: f64,
    pub nodule_mean: f64,
    pub background_mean: f64,
    /// Coefficient of variation of the multiplicative speckle.
    pub speckle: f64,
    /// Gaussian blur standard deviation, in pixels.
    pub blur: f64,
    /// Standard deviation of annotation jitter, in pixels.
    pub jitter: f64,
    /// Number of dark blobs placed away from the nodule.
    pub distractors: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            size: 64,
            radius_min: 8.0,
            radius_max: 16.0,
            perturbation: 0.12,
            nodule_mean: 0.3,
            background_mean: 0.55,
            speckle: 0.4,
            blur: 1.0,
            jitter: 0.0,
            distractors: 2,
        }
    }
}

/// Minimum gap between the nodule extent and the image border.
const MARGIN: f64 = 3.0;

impl PhantomConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.size, self.size)
    }

    fn max_extent(&self) -> f64 {
        self.radius_max * (1.0 + self.perturbation)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.size < 8 || self.size % 4 != 0 {
            return err(format!("image size {} must be >= 8 and divisible by 4", self.size));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return err(format!(
                "radius range [{}, {}] is invalid",
                self.radius_min, self.radius_max
            ));
        }
        if !(0.0..0.5).contains(&self.perturbation) {
            return err(format!("perturbation {} outside [0, 0.5)", self.perturbation));
        }
        if 2.0 * (self.max_extent() + MARGIN) > self.size as f64 {
            return err(format!(
                "radius {} (with perturbation) does not fit a {} image",
                self.radius_max, self.size
            ));
        }
        for (name, v) in [("nodule_mean", self.nodule_mean), ("background_mean", self.background_mean)] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.speckle >= 0.0 && self.blur >= 0.0 && self.jitter >= 0.0) {
            return err("speckle, blur and jitter must be non-negative".into());
        }
        Ok(())
    }
}

/// Geometry of one nodule.
#[derive(Clone, Debug, PartialEq)]
pub struct NoduleShape {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the rotated x direction.
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
    /// `(order, cos coefficient, sin coefficient)` of the radial modulation.
    pub harmonics: Vec<(u32, f64, f64)>,
}

impl NoduleShape {
    pub fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64) -> Self {
        NoduleShape {
            cx,
            cy,
            rx,
            ry,
            angle: 0.0,
            harmonics: Vec::new(),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = libm::sincos(self.angle);
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        let rho2 = u * u + v * v;
        if self.harmonics.is_empty() {
            return rho2 <= 1.0;
        }
        let phi = libm::atan2(v, u);
        let bound = 1.0
            + self
                .harmonics
                .iter()
                .map(|&(k, a, b)| {
                    let (sk, ck) = libm::sincos(k as f64 * phi);
                    a * ck + b * sk
                })
                .sum::<f64>();
        rho2 <= bound * bound
    }

    pub fn rasterize(&self, dims: Dims) -> BinaryMask {
        BinaryMask::from_fn(dims, |x, y| self.contains(x as f64, y as f64))
    }

    fn sample(rng: &mut ChaCha8Rng, cfg: &PhantomConfig) -> Self {
        let rx = rng.random_range(cfg.radius_min..=cfg.radius_max);
        let ry = rng.random_range(cfg.radius_min..=cfg.radius_max);
        let angle = rng.random_range(0.0..core::f64::consts::PI);
        let mut harmonics: Vec<(u32, f64, f64)> = (2..=4)
            .map(|k| (k, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let total: f64 = harmonics.iter().map(|h| libm::fabs(h.1) + libm::fabs(h.2)).sum();
        if total > 0.0 && cfg.perturbation > 0.0 {
            let s = cfg.perturbation / total;
            harmonics.iter_mut().for_each(|h| {
                h.1 *= s;
                h.2 *= s;
            });
        } else {
            harmonics.clear();
        }
        let reach = rx.max(ry) * (1.0 + cfg.perturbation) + MARGIN;
        let size = cfg.size as f64;
        let cx = rng.random_range(reach..=size - 1.0 - reach);
        let cy = rng.random_range(reach..=size - 1.0 - reach);
        NoduleShape {
            cx,
            cy,
            rx,
            ry,
            angle,
            harmonics,
        }
    }
}

/// One image with its annotation and, when known, its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image: ImageGrid,
    pub annotation: FourPointAnnotation,
    pub gt_mask: Option<BinaryMask>,
    pub spacing_mm: Option<f64>,
}

impl SampleRecord {
    pub fn new(
        id: impl Into<String>,
        image: ImageGrid,
        annotation: FourPointAnnotation,
        gt_mask: Option<BinaryMask>,
    ) -> Result<Self> {
        annotation.check_within(image.dims())?;
        if let Some(m) = &gt_mask {
            m.dims().check_same(image.dims())?;
        }
        Ok(SampleRecord {
            id: id.into(),
            image,
            annotation,
            gt_mask,
            spacing_mm: None,
        })
    }
}

/// Noise-free echo map: background, nodule and distractors.
pub fn clean_image(shape: &NoduleShape, distractors: &[NoduleShape], cfg: &PhantomConfig) -> Vec<f64> {
    let dims = cfg.dims();
    let mut out = vec![cfg.background_mean; dims.len()];
    for y in 0..dims.height {
        for x in 0..dims.width {
            let (xf, yf) = (x as f64, y as f64);
            if shape.contains(xf, yf) || distractors.iter().any(|d| d.contains(xf, yf)) {
                out[y * dims.width + x] = cfg.nodule_mean;
            }
        }
    }
    out
}

fn sample_distractors(rng: &mut ChaCha8Rng, shape: &NoduleShape, cfg: &PhantomConfig) -> Vec<NoduleShape> {
    let size = cfg.size as f64;
    let keep_out = shape.rx.max(shape.ry) * (1.0 + cfg.perturbation) + 4.0;
    let mut out = Vec::new();
    for _ in 0..cfg.distractors {
        // Rejection sampling; give up quietly when the nodule fills the frame.
        for _ in 0..50 {
            let r = rng.random_range(cfg.radius_min * 0.4..=cfg.radius_min);
            let cx = rng.random_range(0.0..size);
            let cy = rng.random_range(0.0..size);
            let gap = libm::hypot(cx - shape.cx, cy - shape.cy);
            if gap > keep_out + r {
                let ry = r * rng.random_range(0.5..=1.0);
                out.push(NoduleShape::ellipse(cx, cy, r, ry));
                break;
            }
        }
    }
    out
}

fn gaussian_blur(data: &mut [f64], dims: Dims, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = libm::ceil(3.0 * sigma) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let (w, h) = (dims.width as isize, dims.height as isize);
    let mut tmp = vec![0.0; data.len()];
    // Clamped-edge separable convolution.
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x + k as isize - radius).clamp(0, w - 1);
                acc += kv * data[(y * w + xx) as usize];
                norm += kv;
            }
            tmp[(y * w + x) as usize] = acc / norm;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y + k as isize - radius).clamp(0, h - 1);
                acc += kv * tmp[(yy * w + x) as usize];
                norm += kv;
            }
            data[(y * w + x) as usize] = acc / norm;
        }
    }
}

/// Renders an image for a given nodule shape.
pub fn render_phantom(
    shape: &NoduleShape,
    distractors: &[NoduleShape],
    cfg: &PhantomConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ImageGrid> {
    let dims = cfg.dims();
    let mut data = clean_image(shape, distractors, cfg);
    if cfg.speckle > 0.0 {
        let k = 1.0 / (cfg.speckle * cfg.speckle);
        let gamma = Gamma::new(k, 1.0 / k).map_err(|e| Error::Config(format!("speckle: {e}")))?;
        data.iter_mut().for_each(|v| *v *= gamma.sample(rng));
    }
    gaussian_blur(&mut data, dims, cfg.blur);
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    ImageGrid::new(dims.width, dims.height, data)
}

/// One synthetic record, deterministic in `seed`.
pub fn synth_phantom(seed: u64, cfg: &PhantomConfig) -> Result<SampleRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Thin diagonal shapes can share one pixel between two extremes; redraw them.
    let mut attempts = 0;
    let (shape, gt) = loop {
        let shape = NoduleShape::sample(&mut rng, cfg);
        let gt = shape.rasterize(cfg.dims());
        attempts += 1;
        match extreme_point_annotation(&gt, 0.0, 0) {
            Ok(_) => break (shape, gt),
            Err(e) if attempts >= 64 => return Err(e),
            Err(_) => {}
        }
    };
    let distractors = sample_distractors(&mut rng, &shape, cfg);
    let image = render_phantom(&shape, &distractors, cfg, &mut rng)?;
    let annotation = extreme_point_annotation(&gt, cfg.jitter, rng.random())?;
    SampleRecord::new(format!("phantom_{seed:06}"), image, annotation, Some(gt))
}

/// `count` records with per-record seeds `corpus_seed ^ index`.
pub fn synth_corpus(corpus_seed: u64, count: usize, cfg: &PhantomConfig) -> Result<Vec<SampleRecord>> {
    (0..count as u64)
        .map(|i| {
            let mut r = synth_phantom(corpus_seed ^ i, cfg)?;
            r.id = format!("phantom_{i:05}");
            Ok(r)
        })
        .collect()
}

/// Left-, right-, top- and bottom-most mask pixels, optionally jittered.
///
/// Ties go to the first pixel in row-major order. Jittered points are clipped
/// inside the image before canonicalization.
pub fn extreme_point_annotation(mask: &BinaryMask, jitter_std: f64, seed: u64) -> Result<FourPointAnnotation> {
    let mut it = mask.iter_set();
    let first = it.next().ok_or(Error::EmptyInput("mask has no set pixel"))?;
    let (mut left, mut right, top, mut bottom) = (first, first, first, first);
    for (x, y) in it {
        if x < left.0 {
            left = (x, y);
        }
        if x > right.0 {
            right = (x, y);
        }
        if y > bottom.1 {
            bottom = (x, y);
        }
    }
    let mut pts: Vec<Point> = [left, right, top, bottom]
        .iter()
        .map(|&(x, y)| Point::new(x as f64, y as f64))
        .collect();
    if jitter_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, jitter_std).map_err(|e| Error::Config(format!("jitter: {e}")))?;
        let (w, h) = (mask.width() as f64, mask.height() as f64);
        for p in &mut pts {
            p.x = (p.x + normal.sample(&mut rng)).clamp(0.0, w - 1.0);
            p.y = (p.y + normal.sample(&mut rng)).clamp(0.0, h - 1.0);
        }
    }
    FourPointAnnotation::new(&pts)
}

//! Image grids, binary masks, annotation points and the geometry on them.
//!
//! Coordinates follow the usual raster convention: `x` is the column, `y` the
//! row, both growing away from the top-left corner. Points may be real-valued;
//! they are truncated to pixel indices only where an integer grid demands it.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize) -> Self {
        Dims { width, height }
    }

    pub const fn len(&self) -> usize {
        self.width * self.height
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of the image diagonal, `sqrt(w^2 + h^2)`.
    pub fn diagonal(&self) -> f64 {
        let (w, h) = (self.width as f64, self.height as f64);
        libm::sqrt(w * w + h * h)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    pub(crate) fn check_point(&self, p: Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                x: p.x,
                y: p.y,
                width: self.width,
                height: self.height,
            })
        }
    }

    pub(crate) fn check_same(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }
}

/// Grayscale intensity field with values in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    dims: Dims,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::InvalidImage(alloc::format!(
                "{width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(alloc::format!(
                "expected {} intensities, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(alloc::format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(ImageGrid {
            dims: Dims::new(width, height),
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.dims.width + x]
    }

    /// Intensity at the pixel containing `p`.
    pub fn at_point(&self, p: Point) -> f64 {
        let (x, y) = p.pixel();
        self.get(x, y)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A location in pixel coordinates (`x` column, `y` row).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Integer pixel containing this point (truncation toward zero).
    pub fn pixel(&self) -> (usize, usize) {
        (self.x as usize, self.y as usize)
    }
}

/// Four annotation points in canonical counter-clockwise order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourPointAnnotation {
    points: [Point; 4],
}

impl FourPointAnnotation {
    pub fn new(raw: &[Point]) -> Result<Self> {
        canonicalize_points(raw)
    }

    pub fn points(&self) -> &[Point; 4] {
        &self.points
    }

    pub fn check_within(&self, dims: Dims) -> Result<()> {
        self.points.iter().try_for_each(|&p| dims.check_point(p))
    }
}

/// Sorts four distinct points counter-clockwise by angle about their centroid.
///
/// The angle is `atan2(y - cy, x - cx)` in the coordinate frame as given, so
/// the cycle starts at the point with the smallest angle in `(-pi, pi]`.
/// Equal angles are broken by distance from the centroid, nearest first.
pub fn canonicalize_points(raw: &[Point]) -> Result<FourPointAnnotation> {
    if raw.len() != 4 {
        return Err(Error::WrongArity(raw.len()));
    }
    if let Some(p) = raw.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::OutOfBounds {
            x: p.x,
            y: p.y,
            width: 0,
            height: 0,
        });
    }
    let mut pts = [raw[0], raw[1], raw[2], raw[3]];
    // Lexicographic pre-sort so the centroid sum is independent of input order.
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    if pts.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::DuplicatePoints);
    }
    let cx = (pts[0].x + pts[1].x + pts[2].x + pts[3].x) / 4.0;
    let cy = (pts[0].y + pts[1].y + pts[2].y + pts[3].y) / 4.0;
    let key = |p: &Point| {
        let (dx, dy) = (p.x - cx, p.y - cy);
        (libm::atan2(dy, dx), dx * dx + dy * dy)
    };
    pts.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    Ok(FourPointAnnotation { points: pts })
}

/// Row-major boolean field.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(dims: Dims) -> Self {
        BinaryMask {
            dims,
            bits: vec![false; dims.len()],
        }
    }

    pub fn full(dims: Dims) -> Self {
        BinaryMask {
            dims,
            bits: vec![true; dims.len()],
        }
    }

    pub fn from_bits(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::Shape(alloc::format!(
                "mask of {}x{} needs {} bits, got {}",
                dims.width,
                dims.height,
                dims.len(),
                bits.len()
            )));
        }
        Ok(BinaryMask { dims, bits })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { dims, bits }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.dims.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let w = self.dims.width;
        self.bits[y * w + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels as `(x, y)` in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.dims.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Number of pixels set in both masks.
    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.dims.check_same(other.dims)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.dims.check_same(other.dims)?;
        Ok(BinaryMask {
            dims: self.dims,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

/// Axis-aligned pixel rectangle with inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoxRegion {
    x_min: usize,
    y_min: usize,
    x_max: usize,
    y_max: usize,
}

impl BoxRegion {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(BoxRegion {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> usize {
        self.x_min
    }
    pub fn y_min(&self) -> usize {
        self.y_min
    }
    pub fn x_max(&self) -> usize {
        self.x_max
    }
    pub fn y_max(&self) -> usize {
        self.y_max
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// Tight box around real-valued points, truncating coordinates to pixels.
pub fn bounding_box_of_points(points: &[Point]) -> Result<BoxRegion> {
    let first = points.first().ok_or(Error::EmptyInput("no points"))?;
    let (mut x0, mut y0) = first.pixel();
    let (mut x1, mut y1) = (x0, y0);
    for p in &points[1..] {
        let (x, y) = p.pixel();
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    BoxRegion::new(x0, y0, x1, y1)
}

/// Tight box around the set pixels of a mask.
pub fn bounding_box_of_mask(mask: &BinaryMask) -> Result<BoxRegion> {
    let mut it = mask.iter_set();
    let (fx, fy) = it.next().ok_or(Error::EmptyInput("mask has no set pixel"))?;
    let (mut x0, mut x1, mut y1) = (fx, fx, fy);
    for (x, y) in it {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y;
    }
    // Row-major order: the first set pixel carries the smallest row.
    BoxRegion::new(x0, fy, x1, y1)
}

/// Input accepted by [`min_bounding_box`].
#[derive(Clone, Copy, Debug)]
pub enum BoundsSource<'a> {
    Points(&'a [Point]),
    Mask(&'a BinaryMask),
}

pub fn min_bounding_box(source: BoundsSource<'_>) -> Result<BoxRegion> {
    match source {
        BoundsSource::Points(p) => bounding_box_of_points(p),
        BoundsSource::Mask(m) => bounding_box_of_mask(m),
    }
}

pub fn box_to_mask(region: BoxRegion, dims: Dims) -> Result<BinaryMask> {
    if region.x_max >= dims.width || region.y_max >= dims.height {
        return Err(Error::OutOfBounds {
            x: region.x_max as f64,
            y: region.y_max as f64,
            width: dims.width,
            height: dims.height,
        });
    }
    Ok(BinaryMask::from_fn(dims, |x, y| region.contains(x, y)))
}

/// Fills the annotation quadrilateral.
///
/// A pixel `(x, y)` is set iff the lattice point `(x, y)` lies inside the
/// polygon under the even-odd rule or on one of its edges. Rows are filled as
/// spans between sorted edge crossings; edge lattice points are added apart
/// from the parity test so that degenerate (zero-area) outlines still fill.
pub fn rasterize_polygon(annotation: &FourPointAnnotation, dims: Dims) -> Result<BinaryMask> {
    annotation.check_within(dims)?;
    let pts = annotation.points();
    let mut mask = BinaryMask::empty(dims);
    let y_lo = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_hi = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let row_start = libm::ceil(y_lo) as usize;
    let row_end = (libm::floor(y_hi) as usize).min(dims.height - 1);
    let last_col = dims.width as i64 - 1;
    let mut crossings: Vec<f64> = Vec::with_capacity(4);
    for y in row_start..=row_end {
        let yf = y as f64;
        crossings.clear();
        for i in 0..4 {
            let (a, b) = (pts[i], pts[(i + 1) % 4]);
            if (a.y > yf) != (b.y > yf) {
                crossings.push(a.x + (yf - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            // x is inside iff an odd number of crossings lie strictly right of it.
            let from = (libm::ceil(span[0]) as i64).max(0);
            let to = (libm::ceil(span[1]) as i64 - 1).min(last_col);
            for x in from..=to {
                mask.set(x as usize, y, true);
            }
        }
        for i in 0..4 {
            let (a, b) = (pts[i], pts[(i + 1) % 4]);
            let (lo, hi) = (a.y.min(b.y), a.y.max(b.y));
            if yf < lo || yf > hi {
                continue;
            }
            if a.y == b.y {
                let from = (libm::ceil(a.x.min(b.x)) as i64).max(0);
                let to = (libm::floor(a.x.max(b.x)) as i64).min(last_col);
                for x in from..=to {
                    mask.set(x as usize, y, true);
                }
            } else {
                let xc = a.x + (yf - a.y) * (b.x - a.x) / (b.y - a.y);
                let xr = libm::round(xc);
                if libm::fabs(xc - xr) <= EDGE_EPS && xr >= 0.0 && xr <= last_col as f64 {
                    mask.set(xr as usize, y, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Tolerance for deciding that a lattice point sits on an edge.
pub(crate) const EDGE_EPS: f64 = 1e-9;

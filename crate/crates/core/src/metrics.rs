//! Overlap and boundary metrics for binary predictions.
//!
//! - `dice = 2|P∩R| / (|P|+|R|)`, 1 when both masks are empty.
//! - `iou = |P∩R| / |P∪R|`, 1 when both masks are empty. mIoU is the mean of
//!   per-image foreground IoU.
//! - `hausdorff` is the symmetric max-min Euclidean distance between boundary
//!   pixel sets. A boundary pixel is set and has an unset 4-neighbour or lies
//!   on the image edge. When exactly one mask is empty the image diagonal is
//!   returned as a penalty.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::image::{BinaryMask, Dims};

pub fn dice(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let inter = pred.intersection_count(reference)?;
    let total = pred.count() + reference.count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

pub fn iou(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    let inter = pred.intersection_count(reference)?;
    let union = pred.count() + reference.count() - inter;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Unweighted mean of per-image IoU values; `None` for an empty corpus.
pub fn miou(per_image: &[f64]) -> Option<f64> {
    mean(per_image)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Boundary pixels of a mask in row-major order.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(mask.dims(), |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

/// Outcome of a Hausdorff computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HausdorffResult {
    pub distance: f64,
    /// True when the empty-mask penalty was applied.
    pub penalized: bool,
}

/// Symmetric Hausdorff distance, scaled by `spacing` (e.g. mm per pixel) when given.
pub fn hausdorff(
    pred: &BinaryMask,
    reference: &BinaryMask,
    spacing: Option<f64>,
) -> Result<HausdorffResult> {
    pred.dims().check_same(reference.dims())?;
    let scale = spacing.unwrap_or(1.0);
    let (pe, re) = (pred.is_empty(), reference.is_empty());
    if pe && re {
        return Ok(HausdorffResult { distance: 0.0, penalized: false });
    }
    if pe || re {
        return Ok(HausdorffResult {
            distance: pred.dims().diagonal() * scale,
            penalized: true,
        });
    }
    let (bp, br) = (boundary(pred), boundary(reference));
    let to_ref = squared_distance_transform(&br);
    let to_pred = squared_distance_transform(&bp);
    let directed = |from: &BinaryMask, field: &[u64]| {
        from.iter_set()
            .map(|(x, y)| field[y * from.width() + x])
            .max()
            .unwrap_or(0)
    };
    let worst = directed(&bp, &to_ref).max(directed(&br, &to_pred));
    Ok(HausdorffResult {
        distance: libm::sqrt(worst as f64) * scale,
        penalized: false,
    })
}

/// Exact squared Euclidean distance from every pixel to the nearest set pixel.
///
/// Separable lower-envelope transform: columns first, then rows over the
/// column results. `mask` must be non-empty.
fn squared_distance_transform(mask: &BinaryMask) -> Vec<u64> {
    let (w, h) = (mask.width(), mask.height());
    const INF: u64 = u64::MAX / 4;
    let mut cols = vec![INF; w * h];
    let mut line = vec![0u64; w.max(h)];
    let mut out = vec![0u64; w.max(h)];
    for x in 0..w {
        for y in 0..h {
            line[y] = if mask.get(x, y) { 0 } else { INF };
        }
        envelope_1d(&line[..h], &mut out[..h]);
        for y in 0..h {
            cols[y * w + x] = out[y];
        }
    }
    let mut result = vec![0u64; w * h];
    for y in 0..h {
        envelope_1d(&cols[y * w..(y + 1) * w], &mut out[..w]);
        result[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    result
}

/// `out[q] = min_p (q - p)^2 + f[p]` by scanning a lower envelope of parabolas.
fn envelope_1d(f: &[u64], out: &mut [u64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&p| f[p] < u64::MAX / 8).collect();
    if finite.is_empty() {
        out.iter_mut().for_each(|o| *o = u64::MAX / 4);
        return;
    }
    // Work in i128 to keep the intersection arithmetic exact.
    let val = |p: usize| f[p] as i128 + (p as i128) * (p as i128);
    let mut hull: Vec<usize> = Vec::with_capacity(finite.len());
    // z[k] is the left edge of hull[k]'s interval, as a rational (num, den).
    let mut starts: Vec<(i128, i128)> = Vec::with_capacity(finite.len());
    for &q in &finite {
        loop {
            match hull.last() {
                None => {
                    hull.push(q);
                    starts.push((i128::MIN / 4, 1));
                    break;
                }
                Some(&p) => {
                    // Intersection s = (val(q) - val(p)) / (2 (q - p)).
                    let num = val(q) - val(p);
                    let den = 2 * (q as i128 - p as i128);
                    let (zn, zd) = *starts.last().unwrap();
                    // Pop p while s <= start of p's interval.
                    if hull.len() > 1 && num * zd <= zn * den {
                        hull.pop();
                        starts.pop();
                        continue;
                    }
                    hull.push(q);
                    starts.push((num, den));
                    break;
                }
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let qi = q as i128;
        while k + 1 < hull.len() && starts[k + 1].0 <= qi * starts[k + 1].1 {
            k += 1;
        }
        let p = hull[k];
        let d = qi - p as i128;
        *o = (d * d + f[p] as i128) as u64;
    }
}

/// Metrics for one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub iou: f64,
    pub dice: f64,
    pub hd: f64,
    pub hd_penalized: bool,
}

/// Per-image scores with corpus means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ImageScore>,
    pub mean_iou: f64,
    pub mean_dice: f64,
    pub mean_hd: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<ImageScore>) -> Self {
        let col = |f: fn(&ImageScore) -> f64| {
            let v: Vec<f64> = rows.iter().map(f).collect();
            mean(&v).unwrap_or(0.0)
        };
        EvalReport {
            mean_iou: col(|r| r.iou),
            mean_dice: col(|r| r.dice),
            mean_hd: col(|r| r.hd),
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn score_image(
    id: &str,
    pred: &BinaryMask,
    reference: &BinaryMask,
    spacing: Option<f64>,
) -> Result<ImageScore> {
    let hd = hausdorff(pred, reference, spacing)?;
    Ok(ImageScore {
        id: id.into(),
        iou: iou(pred, reference)?,
        dice: dice(pred, reference)?,
        hd: hd.distance,
        hd_penalized: hd.penalized,
    })
}

/// Image diagonal, the penalty used for empty predictions.
pub fn empty_penalty(dims: Dims) -> f64 {
    dims.diagonal()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(dims: Dims, set: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(dims);
        for &(x, y) in set {
            m.set(x, y, true);
        }
        m
    }

    fn brute_hausdorff(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let (ba, bb) = (boundary(a), boundary(b));
        let directed = |s: &BinaryMask, t: &BinaryMask| {
            s.iter_set()
                .map(|(x, y)| {
                    t.iter_set()
                        .map(|(u, v)| {
                            let (dx, dy) = (x as f64 - u as f64, y as f64 - v as f64);
                            libm::sqrt(dx * dx + dy * dy)
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(&ba, &bb).max(directed(&bb, &ba))
    }

    #[test]
    fn toy_dice_and_iou() {
        let d = Dims::new(4, 4);
        let p = mask_from(d, &[(0, 0), (1, 0), (2, 0), (3, 0)]);
        let r = mask_from(d, &[(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]);
        assert!((dice(&p, &r).unwrap() - 0.6).abs() < 1e-15);
        assert!((iou(&p, &r).unwrap() - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(dice(&p, &p).unwrap(), 1.0);
        assert_eq!(iou(&p, &p).unwrap(), 1.0);
        let q = mask_from(d, &[(3, 3)]);
        assert_eq!(dice(&p, &q).unwrap(), 0.0);
        assert_eq!(dice(&BinaryMask::empty(d), &BinaryMask::empty(d)).unwrap(), 1.0);
        assert!(dice(&p, &BinaryMask::empty(Dims::new(8, 8))).is_err());
        assert_eq!(miou(&[0.4, 0.6]), Some(0.5));
    }

    #[test]
    fn hausdorff_examples() {
        let d = Dims::new(8, 8);
        let a = mask_from(d, &[(0, 0)]);
        let b = mask_from(d, &[(3, 4)]);
        assert_eq!(hausdorff(&a, &b, None).unwrap().distance, 5.0);
        assert_eq!(hausdorff(&a, &b, Some(0.5)).unwrap().distance, 2.5);
        assert_eq!(hausdorff(&a, &a, None).unwrap().distance, 0.0);

        let d = Dims::new(64, 64);
        let gt = mask_from(d, &[(10, 10), (11, 10)]);
        let r = hausdorff(&BinaryMask::empty(d), &gt, None).unwrap();
        assert!(r.penalized);
        assert!((r.distance - 90.509_667_991_878_09).abs() < 1e-9);
    }

    fn random_mask(dims: Dims) -> impl Strategy<Value = BinaryMask> {
        prop::collection::vec(prop::bool::weighted(0.3), dims.len())
            .prop_map(move |bits| BinaryMask::from_bits(dims, bits).unwrap())
    }

    proptest! {
        #[test]
        fn hausdorff_matches_all_pairs(
            (a, b) in (1usize..=16, 1usize..=16).prop_flat_map(|(w, h)| {
                let d = Dims::new(w, h);
                (random_mask(d), random_mask(d))
            })
        ) {
            let got = hausdorff(&a, &b, None).unwrap();
            if a.is_empty() != b.is_empty() {
                prop_assert!(got.penalized);
            } else if !a.is_empty() {
                prop_assert_eq!(got.distance, brute_hausdorff(&a, &b));
                prop_assert_eq!(got.distance, hausdorff(&b, &a, None).unwrap().distance);
            }
            let i = iou(&a, &b).unwrap();
            let dc = dice(&a, &b).unwrap();
            prop_assert!(i <= dc + 1e-15 && dc <= 1.0);
            prop_assert_eq!(dc, dice(&b, &a).unwrap());
        }
    }
}

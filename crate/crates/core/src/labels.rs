//! Multi-level labels derived from a four-point annotation.

use alloc::vec::Vec;

use crate::error::Result;
use crate::image::{
    bounding_box_of_points, box_to_mask, rasterize_polygon, BinaryMask, BoxRegion, Dims,
    FourPointAnnotation,
};

/// Box, pure-foreground, pure-background and mixed masks.
///
/// `fg ⊆ box`, `bg = ¬box` and `mixed = box ∖ fg`, so `fg`, `mixed` and `bg`
/// partition the image.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLevelLabels {
    pub bbox: BoxRegion,
    pub box_mask: BinaryMask,
    pub fg_mask: BinaryMask,
    pub bg_mask: BinaryMask,
    pub mixed_mask: BinaryMask,
}

impl MultiLevelLabels {
    pub fn dims(&self) -> Dims {
        self.box_mask.dims()
    }
}

pub fn generate_labels(annotation: &FourPointAnnotation, dims: Dims) -> Result<MultiLevelLabels> {
    annotation.check_within(dims)?;
    let bbox = bounding_box_of_points(annotation.points())?;
    let box_mask = box_to_mask(bbox, dims)?;
    let fg_mask = rasterize_polygon(annotation, dims)?;
    let bg_mask = box_mask.not();
    let mixed_mask = box_mask.and_not(&fg_mask)?;
    Ok(MultiLevelLabels {
        bbox,
        box_mask,
        fg_mask,
        bg_mask,
        mixed_mask,
    })
}

/// Pixel precision of a label pair against a reference mask.
///
/// A field is `None` when its label region is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrecisionReport {
    pub fg_precision: Option<f64>,
    pub bg_precision: Option<f64>,
}

/// Precision of an arbitrary foreground/background label pair.
pub fn mask_precision(
    fg: &BinaryMask,
    bg: &BinaryMask,
    reference: &BinaryMask,
) -> Result<PrecisionReport> {
    reference.dims().check_same(fg.dims())?;
    reference.dims().check_same(bg.dims())?;
    let ratio = |hit: usize, total: usize| (total > 0).then(|| hit as f64 / total as f64);
    let fg_hit = fg.intersection_count(reference)?;
    let bg_hit = bg.count() - bg.intersection_count(reference)?;
    Ok(PrecisionReport {
        fg_precision: ratio(fg_hit, fg.count()),
        bg_precision: ratio(bg_hit, bg.count()),
    })
}

/// Precision of the pure foreground/background labels.
pub fn label_precision(labels: &MultiLevelLabels, reference: &BinaryMask) -> Result<PrecisionReport> {
    mask_precision(&labels.fg_mask, &labels.bg_mask, reference)
}

/// Precision when the whole box is taken as foreground.
pub fn box_label_precision(
    labels: &MultiLevelLabels,
    reference: &BinaryMask,
) -> Result<PrecisionReport> {
    mask_precision(&labels.box_mask, &labels.bg_mask, reference)
}

/// Unweighted mean of per-image precisions, skipping absent values.
pub fn corpus_precision(reports: &[PrecisionReport]) -> PrecisionReport {
    fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
        let v: Vec<f64> = values.collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
    PrecisionReport {
        fg_precision: mean(reports.iter().filter_map(|r| r.fg_precision)),
        bg_precision: mean(reports.iter().filter_map(|r| r.bg_precision)),
    }
}

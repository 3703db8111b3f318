//! Training objectives.
//!
//! The full objective is `L_all = L_a + L_c^1 + L_c^3` with unit weights:
//! box alignment on the segmentation map plus contrastive terms at pixel and
//! patch scale on the projection embeddings. [`Objective`] switches terms on
//! and off for the ablation presets.

pub mod alignment;
pub mod contrastive;

use alloc::vec::Vec;

pub use alignment::{alignment_loss, box_dice_loss, soft_bounding_box, LossWithGrad, SoftBox, DICE_EPS};
pub use contrastive::{
    contrastive_loss, gather_embeddings, sample_embeddings, sample_locations, scatter_gradients,
    ContrastiveConfig, ContrastiveGrad, Location, SampleLocations, SampleSet, Scale,
};

use crate::error::{Error, Result};
use crate::labels::MultiLevelLabels;
use crate::nn::{Real, Tensor};
use crate::util::mix_seed;

/// Which loss terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Objective {
    /// Pixel-wise soft Dice against the box label (baseline supervision).
    pub box_dice: bool,
    pub alignment: bool,
    pub contrastive: bool,
}

impl Objective {
    pub const FULL: Objective = Objective {
        box_dice: false,
        alignment: true,
        contrastive: true,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossConfig {
    pub pixel: ContrastiveConfig,
    pub patch: ContrastiveConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            pixel: ContrastiveConfig::pixel(),
            patch: ContrastiveConfig::patch(),
        }
    }
}

/// Outcome of one contrastive term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TermStatus {
    Inactive,
    /// Sample counts `(anchors, positives, negatives)`.
    Computed {
        value: f64,
        counts: (usize, usize, usize),
    },
    /// Sampling failed; the term contributes zero.
    Skipped,
}

impl TermStatus {
    pub fn value(&self) -> Option<f64> {
        match self {
            TermStatus::Computed { value, .. } => Some(*value),
            _ => None,
        }
    }
}

/// Scalar summary of one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub box_dice: Option<f64>,
    pub alignment: Option<f64>,
    pub pixel: TermStatus,
    pub patch: TermStatus,
    pub total: f64,
}

/// Loss terms plus gradients w.r.t. every image's outputs.
#[derive(Clone, Debug)]
pub struct BatchLoss<T> {
    pub terms: LossTerms,
    pub seg_grads: Vec<Tensor<T>>,
    pub proj_grads: Vec<Tensor<T>>,
}

/// Network outputs of one image, borrowed.
#[derive(Clone, Copy, Debug)]
pub struct OutputRef<'a, T> {
    pub seg_prob: &'a Tensor<T>,
    pub proj: &'a Tensor<T>,
}

/// Evaluates the active terms over a batch.
///
/// Segmentation terms are averaged over images; contrastive terms pool the
/// whole batch. Sampling streams are derived from `seed`, so a fixed seed
/// fixes the sample locations. A contrastive term whose sampling fails is
/// reported as [`TermStatus::Skipped`] and contributes zero.
pub fn total_loss<T: Real>(
    outputs: &[OutputRef<'_, T>],
    labels: &[&MultiLevelLabels],
    objective: Objective,
    config: &LossConfig,
    seed: u64,
) -> Result<BatchLoss<T>> {
    if outputs.is_empty() || outputs.len() != labels.len() {
        return Err(Error::Shape(alloc::format!(
            "{} outputs for {} label sets",
            outputs.len(),
            labels.len()
        )));
    }
    let n = outputs.len();
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut seg_grads: Vec<Tensor<T>> = outputs
        .iter()
        .map(|o| Tensor::zeros(1, o.seg_prob.height, o.seg_prob.width))
        .collect();
    let mut proj_grads: Vec<Tensor<T>> = outputs
        .iter()
        .map(|o| Tensor::zeros(o.proj.channels, o.proj.height, o.proj.width))
        .collect();
    let mut total = 0.0;

    let seg_term = |enabled: bool,
                        f: fn(&Tensor<T>, &crate::image::BinaryMask) -> Result<LossWithGrad<T>>,
                        grads: &mut [Tensor<T>]|
     -> Result<Option<f64>> {
        if !enabled {
            return Ok(None);
        }
        let mut sum = 0.0;
        for ((o, l), g) in outputs.iter().zip(labels).zip(grads.iter_mut()) {
            let r = f(o.seg_prob, &l.box_mask)?;
            sum += r.value.to_f64();
            for (d, &v) in g.data.iter_mut().zip(&r.grad.data) {
                *d += v * inv_n;
            }
        }
        Ok(Some(sum / n as f64))
    };
    let box_dice = seg_term(objective.box_dice, box_dice_loss, &mut seg_grads)?;
    let alignment = seg_term(objective.alignment, alignment_loss, &mut seg_grads)?;
    total += box_dice.unwrap_or(0.0) + alignment.unwrap_or(0.0);

    let proj: Vec<&Tensor<T>> = outputs.iter().map(|o| o.proj).collect();
    let mut contrastive_term = |cfg: &ContrastiveConfig, stream: u64| -> Result<TermStatus> {
        if !objective.contrastive {
            return Ok(TermStatus::Inactive);
        }
        let samples = match sample_embeddings(&proj, labels, cfg, mix_seed(seed, stream)) {
            Ok(s) => s,
            Err(Error::InsufficientSamples(_)) => return Ok(TermStatus::Skipped),
            Err(e) => return Err(e),
        };
        let g = contrastive_loss(&samples, cfg.tau)?;
        scatter_gradients(&proj, &samples, &g, &mut proj_grads);
        Ok(TermStatus::Computed {
            value: g.value.to_f64(),
            counts: samples.counts(),
        })
    };
    let pixel = contrastive_term(&config.pixel, 1)?;
    let patch = contrastive_term(&config.patch, 3)?;
    total += pixel.value().unwrap_or(0.0) + patch.value().unwrap_or(0.0);

    Ok(BatchLoss {
        terms: LossTerms {
            box_dice,
            alignment,
            pixel,
            patch,
            total,
        },
        seg_grads,
        proj_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Dims, FourPointAnnotation, Point};
    use crate::labels::generate_labels;

    fn labels(raw: &[(f64, f64)]) -> MultiLevelLabels {
        let p: Vec<Point> = raw.iter().map(|&(x, y)| Point::new(x, y)).collect();
        generate_labels(&FourPointAnnotation::new(&p).unwrap(), Dims::new(16, 16)).unwrap()
    }

    fn outputs(seed: usize) -> (Tensor<f64>, Tensor<f64>) {
        let seg = Tensor::from_vec(
            1,
            16,
            16,
            (0..256).map(|i| 0.1 + 0.8 * (((i * 31 + seed) % 97) as f64 / 97.0)).collect(),
        )
        .unwrap();
        let mut proj = Tensor::zeros(4, 16, 16);
        for (i, v) in proj.data.iter_mut().enumerate() {
            *v = libm::sin((i + seed) as f64 * 0.7);
        }
        for y in 0..16 {
            for x in 0..16 {
                let n = libm::sqrt((0..4).map(|c| proj.at(c, y, x).powi(2)).sum::<f64>());
                for c in 0..4 {
                    proj.data[(c * 16 + y) * 16 + x] /= n;
                }
            }
        }
        (seg, proj)
    }

    #[test]
    fn total_is_sum_of_terms() {
        let l = labels(&[(3.0, 8.0), (8.0, 3.0), (13.0, 8.0), (8.0, 13.0)]);
        let (s0, p0) = outputs(0);
        let (s1, p1) = outputs(5);
        let outs = [
            OutputRef { seg_prob: &s0, proj: &p0 },
            OutputRef { seg_prob: &s1, proj: &p1 },
        ];
        let r = total_loss(&outs, &[&l, &l], Objective::FULL, &LossConfig::default(), 11).unwrap();
        let t = r.terms;
        let sum = t.alignment.unwrap() + t.pixel.value().unwrap() + t.patch.value().unwrap();
        assert!((t.total - sum).abs() < 1e-12);
        assert!(t.box_dice.is_none());
    }

    #[test]
    fn failed_sampling_degrades_to_alignment() {
        // Thin annotation: pixel scale works, patch scale cannot.
        let thin = labels(&[(4.0, 2.0), (5.0, 2.0), (5.0, 12.0), (4.0, 12.0)]);
        let (s, p) = outputs(1);
        let outs = [OutputRef { seg_prob: &s, proj: &p }];
        let r = total_loss(&outs, &[&thin], Objective::FULL, &LossConfig::default(), 2).unwrap();
        assert_eq!(r.terms.patch, TermStatus::Skipped);
        assert!(r.terms.pixel.value().is_some());

        // A one-pixel outline leaves fewer than two foreground pixels at both scales.
        let mut dot = thin.clone();
        dot.fg_mask = crate::image::BinaryMask::empty(Dims::new(16, 16));
        let r = total_loss(&outs, &[&dot], Objective::FULL, &LossConfig::default(), 2).unwrap();
        assert_eq!(r.terms.pixel, TermStatus::Skipped);
        assert_eq!(r.terms.patch, TermStatus::Skipped);
        assert_eq!(r.terms.total, r.terms.alignment.unwrap());
        assert!(r.proj_grads[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_batches() {
        let l = labels(&[(3.0, 8.0), (8.0, 3.0), (13.0, 8.0), (8.0, 13.0)]);
        let (s, p) = outputs(0);
        let outs = [OutputRef { seg_prob: &s, proj: &p }];
        assert!(total_loss(&outs, &[&l, &l], Objective::FULL, &LossConfig::default(), 0).is_err());
    }
}

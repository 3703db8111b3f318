use pointseg_core::error::Category;
use pointseg_core::image::{Dims, FourPointAnnotation, ImageGrid, Point};
use pointseg_core::losses::contrastive::eligible_locations;
use pointseg_core::labels::{box_label_precision, generate_labels, label_precision, MultiLevelLabels};
use pointseg_core::losses::{
    alignment_loss, contrastive_loss, sample_embeddings, sample_locations, ContrastiveConfig,
};
use pointseg_core::metrics::{dice, iou};
use pointseg_core::nn::Tensor;
use pointseg_core::phantom::{synth_phantom, PhantomConfig};
use pointseg_core::pipeline::{build_inputs, Preset};
use pointseg_core::prior::{fusion_prior, PriorConfig};
use proptest::prelude::*;

const SIZE: usize = 24;

/// Extreme points (left, top, right, bottom) of a random nodule-sized region.
fn annotation() -> impl Strategy<Value = FourPointAnnotation> {
    (2..10usize, 2..10usize, 13..22usize, 13..22usize)
        .prop_flat_map(|(x0, y0, x1, y1)| {
            let inner_x = (x0 + 1)..x1;
            let inner_y = (y0 + 1)..y1;
            (Just((x0, y0, x1, y1)), inner_x.clone(), inner_x, inner_y.clone(), inner_y)
        })
        .prop_map(|((x0, y0, x1, y1), xt, xb, yl, yr)| {
            let pts = [(x0, yl), (xt, y0), (x1, yr), (xb, y1)].map(|(x, y)| Point::new(x as f64, y as f64));
            FourPointAnnotation::new(&pts).unwrap()
        })
}

fn image() -> impl Strategy<Value = ImageGrid> {
    prop::collection::vec(0.0..1.0f64, SIZE * SIZE).prop_map(|v| ImageGrid::new(SIZE, SIZE, v).unwrap())
}

fn labels(ann: &FourPointAnnotation) -> MultiLevelLabels {
    generate_labels(ann, Dims::new(SIZE, SIZE)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prior_is_bounded_and_peaks_at_points(img in image(), ann in annotation(), sigma in 0.05..1.0f64, theta in 0.05..1.0f64) {
        let cfg = PriorConfig { sigma, theta, ..PriorConfig::default() };
        let map = fusion_prior(&img, &ann, &cfg).unwrap();
        prop_assert!(map.values.iter().all(|&v| v > 0.0 && v <= 1.0));
        for p in ann.points() {
            let (x, y) = p.pixel();
            prop_assert_eq!(map.get(x, y), 1.0);
        }
    }

    #[test]
    fn labels_partition_the_image(ann in annotation()) {
        let l = labels(&ann);
        prop_assert!(l.fg_mask.is_subset_of(&l.box_mask));
        prop_assert_eq!(&l.bg_mask, &l.box_mask.not());
        prop_assert_eq!(&l.mixed_mask, &l.box_mask.and_not(&l.fg_mask).unwrap());
        prop_assert_eq!(l.fg_mask.count() + l.mixed_mask.count() + l.bg_mask.count(), SIZE * SIZE);
    }

    #[test]
    fn alignment_loss_is_a_unit_interval_loss(probs in prop::collection::vec(0.001..0.999f64, SIZE * SIZE), ann in annotation()) {
        let l = labels(&ann);
        let p = Tensor::from_vec(1, SIZE, SIZE, probs).unwrap();
        let r = alignment_loss(&p, &l.box_mask).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.value));
        // Only the argmax of each profile receives gradient.
        let touched = r.grad.data.iter().filter(|g| **g != 0.0).count();
        prop_assert!(touched <= 2 * SIZE);
        let exact = l.box_mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let exact = Tensor::from_vec(1, SIZE, SIZE, exact).unwrap();
        prop_assert!(alignment_loss(&exact, &l.box_mask).unwrap().value < 1e-9);
    }

    #[test]
    fn sampled_locations_respect_purity(a in annotation(), b in annotation(), seed in any::<u64>(), patch in any::<bool>()) {
        let (la, lb) = (labels(&a), labels(&b));
        let batch = [&la, &lb];
        let cfg = if patch { ContrastiveConfig::patch() } else { ContrastiveConfig::pixel() };
        let Ok(s) = sample_locations(&batch, &cfg, seed) else {
            prop_assert!(eligible_locations(&batch, Category::Foreground, cfg.scale).len() < 2);
            return Ok(());
        };
        let r = cfg.scale.size() as isize / 2;
        let inside = |mask: &pointseg_core::image::BinaryMask, x: usize, y: usize| {
            (-r..=r).all(|dy| (-r..=r).all(|dx| {
                let (u, v) = (x as isize + dx, y as isize + dy);
                u >= 0 && v >= 0 && (u as usize) < SIZE && (v as usize) < SIZE && mask.get(u as usize, v as usize)
            }))
        };
        for loc in s.anchors.iter().chain(&s.positives) {
            prop_assert!(inside(&batch[loc.image].fg_mask, loc.x, loc.y));
        }
        for loc in &s.negatives {
            prop_assert!(inside(&batch[loc.image].bg_mask, loc.x, loc.y));
        }
        prop_assert!(s.anchors.iter().all(|q| !s.positives.contains(q)));
        prop_assert_eq!(s, sample_locations(&batch, &cfg, seed).unwrap());
    }

    #[test]
    fn contrastive_loss_is_positive(a in annotation(), b in annotation(), seed in any::<u64>(), feats in prop::collection::vec(-1.0..1.0f64, 4 * SIZE * SIZE)) {
        let (la, lb) = (labels(&a), labels(&b));
        let batch = [&la, &lb];
        let half = 2 * SIZE * SIZE;
        let p0 = Tensor::from_vec(2, SIZE, SIZE, feats[..half].to_vec()).unwrap();
        let p1 = Tensor::from_vec(2, SIZE, SIZE, feats[half..].to_vec()).unwrap();
        let cfg = ContrastiveConfig::pixel();
        let samples = sample_embeddings(&[&p0, &p1], &batch, &cfg, seed).unwrap();
        let g = contrastive_loss(&samples, cfg.tau).unwrap();
        prop_assert!(g.value > 0.0 && g.value.is_finite());
    }

    #[test]
    fn iou_never_exceeds_dice(a in annotation(), b in annotation()) {
        let (la, lb) = (labels(&a), labels(&b));
        prop_assert!(iou(&la.fg_mask, &lb.box_mask).unwrap() <= dice(&la.fg_mask, &lb.box_mask).unwrap());
    }

    #[test]
    fn inputs_never_see_the_ground_truth(seed in 0..500u64, preset in 0..8usize) {
        let cfg = PhantomConfig { size: 32, radius_min: 5.0, radius_max: 9.0, ..PhantomConfig::default() };
        let record = synth_phantom(seed, &cfg).unwrap();
        let mut blind = record.clone();
        blind.gt_mask = None;
        let preset = Preset::ALL[preset];
        let prior = PriorConfig::default();
        prop_assert_eq!(build_inputs(&record, preset, &prior).unwrap(), build_inputs(&blind, preset, &prior).unwrap());
        let gt = record.gt_mask.as_ref().unwrap();
        let l = generate_labels(&record.annotation, gt.dims()).unwrap();
        let pure = label_precision(&l, gt).unwrap().fg_precision.unwrap();
        prop_assert!(pure >= box_label_precision(&l, gt).unwrap().fg_precision.unwrap());
    }
}

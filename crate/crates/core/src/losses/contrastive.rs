//! Batch-wide contrastive loss over pure-region embeddings.
//!
//! Anchors and positives are drawn from pure-foreground locations, negatives
//! from pure-background locations, pooling every image of the batch. At patch
//! scale a location is the centre of a 3x3 window that must lie entirely in
//! one pure region, and its embedding is the re-normalized window mean.
//!
//! For anchor `q`, positive `q+` and negatives `q-`:
//!
//! ```text
//! l(q, q+) = -log( e^{q.q+/tau} / (e^{q.q+/tau} + sum_{q-} e^{q.q-/tau}) )
//! L        = mean over all (anchor, positive) pairs
//! ```

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Category, Error, Result};
use crate::image::BinaryMask;
use crate::labels::MultiLevelLabels;
use crate::nn::{Real, Tensor};

/// Sampling window: single pixels or 3x3 patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scale {
    Pixel,
    Patch,
}

impl Scale {
    pub fn size(self) -> usize {
        match self {
            Scale::Pixel => 1,
            Scale::Patch => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub n_anchors: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub scale: Scale,
}

impl ContrastiveConfig {
    pub fn pixel() -> Self {
        ContrastiveConfig {
            tau: 0.1,
            n_anchors: 64,
            n_pos: 64,
            n_neg: 256,
            scale: Scale::Pixel,
        }
    }

    pub fn patch() -> Self {
        ContrastiveConfig {
            tau: 0.1,
            n_anchors: 16,
            n_pos: 16,
            n_neg: 64,
            scale: Scale::Patch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(alloc::format!("tau must be positive, got {}", self.tau)));
        }
        if self.n_anchors == 0 || self.n_pos == 0 || self.n_neg == 0 {
            return Err(Error::Config("contrastive sample counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where a sample came from: image index in the batch and centre pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Location {
    pub image: usize,
    pub x: usize,
    pub y: usize,
}

/// Sampled locations, independent of any feature values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleLocations {
    pub scale: Scale,
    pub anchors: Vec<Location>,
    pub positives: Vec<Location>,
    pub negatives: Vec<Location>,
}

/// Unit embeddings gathered at sampled locations (row-major, `dim` wide).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet<T> {
    pub locations: SampleLocations,
    pub dim: usize,
    pub anchors: Vec<T>,
    pub positives: Vec<T>,
    pub negatives: Vec<T>,
}

impl<T> SampleSet<T> {
    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.locations.anchors.len(),
            self.locations.positives.len(),
            self.locations.negatives.len(),
        )
    }
}

fn window_inside(mask: &BinaryMask, x: usize, y: usize, scale: Scale) -> bool {
    match scale {
        Scale::Pixel => mask.get(x, y),
        Scale::Patch => {
            x >= 1
                && y >= 1
                && x + 1 < mask.width()
                && y + 1 < mask.height()
                && (y - 1..=y + 1).all(|v| (x - 1..=x + 1).all(|u| mask.get(u, v)))
        }
    }
}

/// Eligible centres for one category across the batch, image-major then row-major.
pub fn eligible_locations(
    labels: &[&MultiLevelLabels],
    category: Category,
    scale: Scale,
) -> Vec<Location> {
    let mut out = Vec::new();
    for (image, l) in labels.iter().enumerate() {
        let mask = match category {
            Category::Foreground => &l.fg_mask,
            Category::Background => &l.bg_mask,
        };
        for (x, y) in mask.iter_set() {
            if window_inside(mask, x, y, scale) {
                out.push(Location { image, x, y });
            }
        }
    }
    out
}

/// Uniform sampling without replacement per category over the whole batch.
///
/// Anchors and positives are disjoint draws from the foreground pool. When the
/// pool is smaller than requested, both shrink proportionally (at least one
/// each), which needs two eligible foreground locations.
pub fn sample_locations(
    labels: &[&MultiLevelLabels],
    config: &ContrastiveConfig,
    seed: u64,
) -> Result<SampleLocations> {
    config.validate()?;
    let fg = eligible_locations(labels, Category::Foreground, config.scale);
    let bg = eligible_locations(labels, Category::Background, config.scale);
    if fg.len() < 2 {
        return Err(Error::InsufficientSamples(Category::Foreground));
    }
    if bg.is_empty() {
        return Err(Error::InsufficientSamples(Category::Background));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wanted = config.n_anchors + config.n_pos;
    let k = wanted.min(fg.len());
    let n_anchor = if k == wanted {
        config.n_anchors
    } else {
        (k * config.n_anchors / wanted).clamp(1, k - 1)
    };
    let picks = rand::seq::index::sample(&mut rng, fg.len(), k).into_vec();
    let anchors = picks[..n_anchor].iter().map(|&i| fg[i]).collect();
    let positives = picks[n_anchor..].iter().map(|&i| fg[i]).collect();
    let n_neg = config.n_neg.min(bg.len());
    let negatives = rand::seq::index::sample(&mut rng, bg.len(), n_neg)
        .into_iter()
        .map(|i| bg[i])
        .collect();
    Ok(SampleLocations {
        scale: config.scale,
        anchors,
        positives,
        negatives,
    })
}

/// Raw window sum at a location (before normalization) and its norm.
fn window_embedding<T: Real>(proj: &Tensor<T>, loc: Location, scale: Scale, out: &mut [T]) -> T {
    out.iter_mut().for_each(|v| *v = T::ZERO);
    let r = scale.size() / 2;
    for v in loc.y - r..=loc.y + r {
        for u in loc.x - r..=loc.x + r {
            for (c, o) in out.iter_mut().enumerate() {
                *o += proj.at(c, v, u);
            }
        }
    }
    let n = T::from_f64((scale.size() * scale.size()) as f64);
    out.iter_mut().for_each(|o| *o /= n);
    let norm = out.iter().map(|&o| o * o).sum::<T>().sqrt();
    norm
}

fn gather<T: Real>(proj: &[&Tensor<T>], locs: &[Location], scale: Scale, dim: usize) -> Vec<T> {
    let mut flat = vec![T::ZERO; locs.len() * dim];
    for (loc, dst) in locs.iter().zip(flat.chunks_exact_mut(dim)) {
        let p = proj[loc.image];
        match scale {
            Scale::Pixel => {
                for (c, d) in dst.iter_mut().enumerate() {
                    *d = p.at(c, loc.y, loc.x);
                }
            }
            Scale::Patch => {
                let norm = window_embedding(p, *loc, scale, dst);
                let norm = norm.max(T::from_f64(1e-12));
                dst.iter_mut().for_each(|d| *d /= norm);
            }
        }
    }
    flat
}

pub fn gather_embeddings<T: Real>(proj: &[&Tensor<T>], locations: SampleLocations) -> SampleSet<T> {
    let dim = proj.first().map_or(0, |p| p.channels);
    let s = locations.scale;
    SampleSet {
        anchors: gather(proj, &locations.anchors, s, dim),
        positives: gather(proj, &locations.positives, s, dim),
        negatives: gather(proj, &locations.negatives, s, dim),
        dim,
        locations,
    }
}

/// Samples locations from the batch labels and gathers their embeddings.
pub fn sample_embeddings<T: Real>(
    proj: &[&Tensor<T>],
    labels: &[&MultiLevelLabels],
    config: &ContrastiveConfig,
    seed: u64,
) -> Result<SampleSet<T>> {
    if proj.is_empty() || proj.len() != labels.len() {
        return Err(Error::Shape(alloc::format!(
            "{} feature maps for {} label sets",
            proj.len(),
            labels.len()
        )));
    }
    let locations = sample_locations(labels, config, seed)?;
    Ok(gather_embeddings(proj, locations))
}

/// Loss value with gradients w.r.t. each gathered embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveGrad<T> {
    pub value: T,
    pub anchors: Vec<T>,
    pub positives: Vec<T>,
    pub negatives: Vec<T>,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn contrastive_loss<T: Real>(samples: &SampleSet<T>, tau: f64) -> Result<ContrastiveGrad<T>> {
    let dim = samples.dim;
    let (na, np, nn) = (
        samples.anchors.len() / dim.max(1),
        samples.positives.len() / dim.max(1),
        samples.negatives.len() / dim.max(1),
    );
    if dim == 0 || na == 0 {
        return Err(Error::EmptyCategory("anchor"));
    }
    if np == 0 {
        return Err(Error::EmptyCategory("positive"));
    }
    if nn == 0 {
        return Err(Error::EmptyCategory("negative"));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(alloc::format!("tau must be positive, got {tau}")));
    }
    let inv_tau = T::from_f64(1.0 / tau);
    let pairs = T::from_f64((na * np) as f64);
    let mut value = T::ZERO;
    let mut g_a = vec![T::ZERO; na * dim];
    let mut g_p = vec![T::ZERO; np * dim];
    let mut g_n = vec![T::ZERO; nn * dim];
    let mut s_neg = vec![T::ZERO; nn];
    let mut s_pos = vec![T::ZERO; np];
    let mut w_neg = vec![T::ZERO; nn];
    for a in 0..na {
        let q = &samples.anchors[a * dim..(a + 1) * dim];
        for (k, s) in s_neg.iter_mut().enumerate() {
            *s = dot(q, &samples.negatives[k * dim..(k + 1) * dim]) * inv_tau;
        }
        for (p, s) in s_pos.iter_mut().enumerate() {
            *s = dot(q, &samples.positives[p * dim..(p + 1) * dim]) * inv_tau;
        }
        let m_neg = s_neg.iter().copied().fold(s_neg[0], T::max);
        let sum_neg: T = s_neg.iter().map(|&s| (s - m_neg).exp()).sum();
        // Accumulates sum_p exp(m_neg - lse_p) for the negative gradients.
        let mut neg_weight = T::ZERO;
        let ga = &mut g_a[a * dim..(a + 1) * dim];
        for (p, &sp) in s_pos.iter().enumerate() {
            let m = sp.max(m_neg);
            let lse = m + ((sp - m).exp() + sum_neg * (m_neg - m).exp()).ln();
            value += lse - sp;
            // dl/ds_p = softmax_p - 1
            let d_sp = ((sp - lse).exp() - T::ONE) * inv_tau / pairs;
            let qp = &samples.positives[p * dim..(p + 1) * dim];
            let gp = &mut g_p[p * dim..(p + 1) * dim];
            for i in 0..dim {
                ga[i] += d_sp * qp[i];
                gp[i] += d_sp * q[i];
            }
            neg_weight += (m_neg - lse).exp();
        }
        for (k, w) in w_neg.iter_mut().enumerate() {
            *w = (s_neg[k] - m_neg).exp() * neg_weight * inv_tau / pairs;
        }
        for k in 0..nn {
            let qn = &samples.negatives[k * dim..(k + 1) * dim];
            let gn = &mut g_n[k * dim..(k + 1) * dim];
            for i in 0..dim {
                ga[i] += w_neg[k] * qn[i];
                gn[i] += w_neg[k] * q[i];
            }
        }
    }
    Ok(ContrastiveGrad {
        value: value / pairs,
        anchors: g_a,
        positives: g_p,
        negatives: g_n,
    })
}

/// Routes embedding gradients back onto per-image projection fields.
///
/// At patch scale the chain passes through the re-normalized window mean.
pub fn scatter_gradients<T: Real>(
    proj: &[&Tensor<T>],
    samples: &SampleSet<T>,
    grads: &ContrastiveGrad<T>,
    out: &mut [Tensor<T>],
) {
    let dim = samples.dim;
    let scale = samples.locations.scale;
    let groups = [
        (&samples.locations.anchors, &samples.anchors, &grads.anchors),
        (&samples.locations.positives, &samples.positives, &grads.positives),
        (&samples.locations.negatives, &samples.negatives, &grads.negatives),
    ];
    let mut mean = vec![T::ZERO; dim];
    let mut g_mean = vec![T::ZERO; dim];
    for (locs, emb, g) in groups {
        for (j, loc) in locs.iter().enumerate() {
            let e = &emb[j * dim..(j + 1) * dim];
            let ge = &g[j * dim..(j + 1) * dim];
            let target = &mut out[loc.image];
            let plane = target.plane();
            let w = target.width;
            match scale {
                Scale::Pixel => {
                    for c in 0..dim {
                        target.data[c * plane + loc.y * w + loc.x] += ge[c];
                    }
                }
                Scale::Patch => {
                    let norm = window_embedding(proj[loc.image], *loc, scale, &mut mean)
                        .max(T::from_f64(1e-12));
                    // d(m/|m|)/dm applied to ge, then d(mean)/d(pixel) = 1/9.
                    let proj_on_e = dot(e, ge);
                    let ninth = T::from_f64(1.0 / 9.0);
                    for c in 0..dim {
                        g_mean[c] = (ge[c] - e[c] * proj_on_e) / norm * ninth;
                    }
                    for v in loc.y - 1..=loc.y + 1 {
                        for u in loc.x - 1..=loc.x + 1 {
                            for c in 0..dim {
                                target.data[c * plane + v * w + u] += g_mean[c];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Dims, FourPointAnnotation, Point};
    use crate::labels::generate_labels;
    use std::vec::Vec;

    fn set_from(dim: usize, a: &[&[f64]], p: &[&[f64]], n: &[&[f64]]) -> SampleSet<f64> {
        let flat = |v: &[&[f64]]| v.iter().flat_map(|x| x.iter().copied()).collect::<Vec<_>>();
        let loc = |k: usize| vec![Location { image: 0, x: 0, y: 0 }; k];
        SampleSet {
            locations: SampleLocations {
                scale: Scale::Pixel,
                anchors: loc(a.len()),
                positives: loc(p.len()),
                negatives: loc(n.len()),
            },
            dim,
            anchors: flat(a),
            positives: flat(p),
            negatives: flat(n),
        }
    }

    #[test]
    fn symmetric_case_is_ln2() {
        let s = 0.6f64;
        let c = libm::sqrt(1.0 - s * s);
        let q = [1.0, 0.0, 0.0];
        let pos = [s, c, 0.0];
        let neg = [s, 0.0, c];
        for tau in [0.05, 0.1, 1.0, 3.0] {
            let l = contrastive_loss(&set_from(3, &[&q], &[&pos], &[&neg]), tau).unwrap();
            assert!((l.value - core::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_negatives_closed_form() {
        let q = [1.0, 0.0, 0.0, 0.0, 0.0];
        let negs: Vec<[f64; 5]> = (1..5)
            .map(|i| {
                let mut v = [0.0; 5];
                v[i] = 1.0;
                v
            })
            .collect();
        for k in [1usize, 2, 4] {
            let n: Vec<&[f64]> = negs[..k].iter().map(|v| v.as_slice()).collect();
            let l = contrastive_loss(&set_from(5, &[&q], &[&q], &n), 1.0).unwrap();
            let direct = -libm::log(libm::exp(1.0) / (libm::exp(1.0) + k as f64 * libm::exp(0.0)));
            assert!((l.value - direct).abs() < 1e-12);
            assert!((l.value - libm::log(1.0 + k as f64 * libm::exp(-1.0))).abs() < 1e-12);
        }
        assert!(
            (contrastive_loss(&set_from(5, &[&q], &[&q], &[&negs[0]]), 1.0).unwrap().value
                - 0.313_261_687_518_222_8)
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn empty_categories_are_rejected() {
        let q = [1.0, 0.0];
        assert_eq!(
            contrastive_loss(&set_from(2, &[&q], &[&q], &[]), 0.1).unwrap_err(),
            Error::EmptyCategory("negative")
        );
        assert_eq!(
            contrastive_loss(&set_from(2, &[&q], &[], &[&q]), 0.1).unwrap_err(),
            Error::EmptyCategory("positive")
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let raw: Vec<f64> = (0..7 * 4).map(|i| libm::sin(i as f64 * 1.7) + 0.1).collect();
        let unit = |v: &[f64]| {
            let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            v.iter().map(|x| x / n).collect::<Vec<_>>()
        };
        let vecs: Vec<Vec<f64>> = raw.chunks(4).map(unit).collect();
        let base = set_from(
            4,
            &[&vecs[0], &vecs[1]],
            &[&vecs[2], &vecs[3]],
            &[&vecs[4], &vecs[5], &vecs[6]],
        );
        let tau = 0.3;
        let g = contrastive_loss(&base, tau).unwrap();
        let h = 1e-6;
        let check = |field: fn(&mut SampleSet<f64>) -> &mut Vec<f64>, analytic: &[f64]| {
            for i in 0..analytic.len() {
                let mut plus = base.clone();
                field(&mut plus)[i] += h;
                let mut minus = base.clone();
                field(&mut minus)[i] -= h;
                let fd = (contrastive_loss(&plus, tau).unwrap().value
                    - contrastive_loss(&minus, tau).unwrap().value)
                    / (2.0 * h);
                assert!((fd - analytic[i]).abs() < 1e-7, "{i}: {fd} vs {}", analytic[i]);
            }
        };
        check(|s| &mut s.anchors, &g.anchors);
        check(|s| &mut s.positives, &g.positives);
        check(|s| &mut s.negatives, &g.negatives);
        assert!(g.value > 0.0);
    }

    fn labels_for(raw: &[(f64, f64)], dims: Dims) -> MultiLevelLabels {
        let p: Vec<Point> = raw.iter().map(|&(x, y)| Point::new(x, y)).collect();
        generate_labels(&FourPointAnnotation::new(&p).unwrap(), dims).unwrap()
    }

    #[test]
    fn sampling_contracts() {
        let dims = Dims::new(32, 32);
        let wide = labels_for(&[(8.0, 16.0), (16.0, 8.0), (24.0, 16.0), (16.0, 24.0)], dims);
        // Two pixels wide: no 3x3 window fits inside.
        let thin = labels_for(&[(4.0, 10.0), (5.0, 10.0), (5.0, 20.0), (4.0, 20.0)], dims);
        let thin_batch = [&thin, &thin];
        assert!(sample_locations(&thin_batch, &ContrastiveConfig::pixel(), 1).is_ok());
        assert_eq!(
            sample_locations(&thin_batch, &ContrastiveConfig::patch(), 1),
            Err(Error::InsufficientSamples(Category::Foreground))
        );

        let batch = [&wide, &thin];
        let a = sample_locations(&batch, &ContrastiveConfig::pixel(), 7).unwrap();
        assert_eq!(a, sample_locations(&batch, &ContrastiveConfig::pixel(), 7).unwrap());
        assert_ne!(a, sample_locations(&batch, &ContrastiveConfig::pixel(), 8).unwrap());
        assert_eq!(a.anchors.len(), 64);
        assert_eq!(a.negatives.len(), 256);
        for l in a.anchors.iter().chain(&a.positives) {
            assert!(batch[l.image].fg_mask.get(l.x, l.y));
        }
        for l in &a.negatives {
            assert!(batch[l.image].bg_mask.get(l.x, l.y));
        }
        assert!(a.anchors.iter().all(|l| !a.positives.contains(l)));
        assert!(a.anchors.iter().chain(&a.positives).any(|l| l.image == 1));
    }

    #[test]
    fn patch_scatter_matches_finite_differences() {
        let dims = Dims::new(8, 8);
        let labels = labels_for(&[(1.0, 1.0), (6.0, 1.0), (6.0, 4.0), (1.0, 4.0)], dims);
        let mut proj = Tensor::<f64>::zeros(3, 8, 8);
        for (i, v) in proj.data.iter_mut().enumerate() {
            *v = libm::cos(i as f64 * 0.37) + 0.05;
        }
        let cfg = ContrastiveConfig { n_anchors: 2, n_pos: 2, n_neg: 3, ..ContrastiveConfig::patch() };
        let locs = sample_locations(&[&labels], &cfg, 3).unwrap();
        let loss_of = |p: &Tensor<f64>| {
            contrastive_loss(&gather_embeddings(&[p], locs.clone()), cfg.tau).unwrap().value
        };
        let set = gather_embeddings(&[&proj], locs.clone());
        let g = contrastive_loss(&set, cfg.tau).unwrap();
        let mut out = [Tensor::zeros(3, 8, 8)];
        scatter_gradients(&[&proj], &set, &g, &mut out);
        let h = 1e-6;
        for i in 0..proj.data.len() {
            let mut plus = proj.clone();
            plus.data[i] += h;
            let mut minus = proj.clone();
            minus.data[i] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            assert!((fd - out[0].data[i]).abs() < 1e-6, "{i}: {fd} vs {}", out[0].data[i]);
        }
    }
}

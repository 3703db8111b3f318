//! Central finite-difference checks of parameter gradients.

use alloc::string::String;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::ModelParams;
use crate::error::Result;

/// Largest observed error `|analytic - numeric| / max(1, |analytic|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_error: f64,
    /// Layer name, `"weight"`/`"bias"` and index of the worst entry.
    pub worst: Option<(String, &'static str, usize)>,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_error < tolerance
    }
}

/// Compares `analytic` with central differences of `loss` at `params`.
///
/// Up to `per_tensor` entries of every weight and bias tensor are checked,
/// chosen by `seed`.
pub fn check_gradients<F>(
    params: &ModelParams<f64>,
    analytic: &ModelParams<f64>,
    per_tensor: usize,
    step: f64,
    seed: u64,
    mut loss: F,
) -> Result<GradCheck>
where
    F: FnMut(&ModelParams<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report = GradCheck {
        checked: 0,
        max_error: 0.0,
        worst: None,
    };
    for li in 0..params.layers.len() {
        for kind in ["weight", "bias"] {
            let len = match kind {
                "weight" => params.layers[li].weight.len(),
                _ => params.layers[li].bias.len(),
            };
            for i in sample(&mut rng, len, per_tensor.min(len)) {
                let orig = *entry(&mut probe, li, kind, i);
                *entry(&mut probe, li, kind, i) = orig + step;
                let plus = loss(&probe)?;
                *entry(&mut probe, li, kind, i) = orig - step;
                let minus = loss(&probe)?;
                *entry(&mut probe, li, kind, i) = orig;
                let numeric = (plus - minus) / (2.0 * step);
                let a = if kind == "weight" {
                    analytic.layers[li].weight[i]
                } else {
                    analytic.layers[li].bias[i]
                };
                let err = libm::fabs(a - numeric) / libm::fabs(a).max(1.0);
                report.checked += 1;
                if err > report.max_error || report.worst.is_none() {
                    report.max_error = err.max(report.max_error);
                    report.worst = Some((params.layers[li].name.clone(), kind, i));
                }
            }
        }
    }
    Ok(report)
}

fn entry<'a>(p: &'a mut ModelParams<f64>, layer: usize, kind: &str, i: usize) -> &'a mut f64 {
    let l = &mut p.layers[layer];
    if kind == "weight" {
        &mut l.weight[i]
    } else {
        &mut l.bias[i]
    }
}

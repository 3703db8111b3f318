use super::model::ModelParams;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(Error::Shape("adam: parameter/gradient/state layouts differ".into()));
    }
    grads.check_finite()?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(config.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(config.beta2, t as f64);
    let (b1, b2) = (T::from_f64(config.beta1), T::from_f64(config.beta2));
    let (a1, a2) = (T::ONE - b1, T::ONE - b2);
    let (lr, eps) = (T::from_f64(config.lr), T::from_f64(config.eps));
    let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
    let moments = state.m.tensors_mut().zip(state.v.tensors_mut());
    for ((p, g), (m, v)) in params.tensors_mut().zip(grads.tensors()).zip(moments) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + a1 * g[i];
            v[i] = b2 * v[i] + a2 * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = ModelParams::<f64>::init(1);
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ModelParams::<f64>::zeros();
        let mut g = p.zeros_like();
        g.layers[0].bias[0] = 1.0;
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 1, step = lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.layers[0].bias[0] - expected).abs() < 1e-15);
        assert_eq!(p.layers[0].bias[1], 0.0);
    }

    #[test]
    fn identical_runs_match() {
        let run = || {
            let mut p = ModelParams::<f32>::init(7);
            let mut s = AdamState::new(&p);
            for k in 0..5 {
                let mut g = p.zeros_like();
                g.layers.iter_mut().for_each(|l| {
                    l.weight.iter_mut().enumerate().for_each(|(i, w)| *w = ((i + k) % 7) as f32 - 3.0)
                });
                adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            }
            p.checksum()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut p = ModelParams::<f64>::zeros();
        let mut g = p.zeros_like();
        g.layers.pop();
        let mut s = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, &AdamConfig::default()),
            Err(Error::Shape(_))
        ));
    }
}

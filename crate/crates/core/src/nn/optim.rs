use serde::{Deserialize, Serialize};

use super::tensor::{ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every trainable tensor.
///
/// Gradients are checked for finiteness before anything is modified.
pub fn adam_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let n = params.len();
    for k in 0..n {
        let id = super::tensor::ParamId(k);
        if !params.is_trainable(id) {
            continue;
        }
        let g = &grads.tensors()[k].data;
        let m = &mut state.m.tensors_mut()[k].data;
        let v = &mut state.v.tensors_mut()[k].data;
        let p = &mut params.tensors_mut()[k].data;
        for i in 0..p.len() {
            let gi = g[i].f64();
            let mi = b1 * m[i].f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].f64() + (1.0 - b2) * gi * gi;
            m[i] = T::of(mi);
            v[i] = T::of(vi);
            let update = cfg.learning_rate * (mi / c1) / ((vi / c2).sqrt() + cfg.epsilon);
            p[i] = T::of(p[i].f64() - update);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so that their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn single(values: Vec<f64>) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("x", Tensor::from_vec(1, values.len(), values));
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(vec![1.0, -2.0, 0.5]);
        let g = single(vec![0.3, -4.0, 1e-3]);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let expect = [1.0 - 0.001, -2.0 + 0.001, 0.5 - 0.001];
        for (a, e) in p.tensors()[0].data.iter().zip(expect) {
            assert!((a - e).abs() < 1e-7, "{a} vs {e}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(vec![1.0, 2.0]);
        let g = single(vec![0.0, 0.0]);
        let mut st = AdamState::new(&p);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.tensors()[0].data, vec![1.0, 2.0]);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut p = single(vec![1.0]);
        let g = single(vec![f64::NAN]);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "x"));
        assert_eq!(p.tensors()[0].data, vec![1.0]);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = single(vec![3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = single(vec![0.3, 0.4]);
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small.tensors()[0].data, vec![0.3, 0.4]);
    }
}

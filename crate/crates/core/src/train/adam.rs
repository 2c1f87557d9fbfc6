use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Bias-corrected Adam update. Parameters are untouched if any gradient is
/// non-finite.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    for (id, g) in store.ids().zip(grads) {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient(store.name(id).to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (k, p) in store.values_mut().iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[k], &mut state.v[k], &grads[k]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::vector(values));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(vec![1.0, -2.0]);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![0.0, 0.0]], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s.get(s.find("x").unwrap()).data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut s = store(vec![1.0, 1.0]);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![3.0, -0.5]], &mut st, &AdamConfig::default()).unwrap();
        let x = s.get(s.find("x").unwrap()).data();
        assert!((x[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((x[1] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn converges_on_quadratic() {
        let a = [0.3, -0.7, 0.05];
        let mut s = store(vec![0.0; 3]);
        let mut st = AdamState::new(&s);
        // With beta1 = 0.9 the heavy-ball contraction (about sqrt(0.9) per
        // step) cannot reach 1e-6 within 200 steps from any start.
        let cfg = AdamConfig {
            lr: 0.05,
            beta1: 0.8,
            ..Default::default()
        };
        let id = s.find("x").unwrap();
        let grad = |s: &ParamStore| -> Vec<f64> {
            s.get(id)
                .data()
                .iter()
                .zip(&a)
                .map(|(x, a)| x - a)
                .collect()
        };
        for _ in 0..200 {
            let g = grad(&s);
            adam_step(&mut s, &[g], &mut st, &cfg).unwrap();
        }
        let norm = grad(&s).iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(vec![1.0]);
        let mut st = AdamState::new(&s);
        let err =
            adam_step(&mut s, &[vec![f64::NAN]], &mut st, &AdamConfig::default()).unwrap_err();
        assert_eq!(err, TrainError::NonFiniteGradient("x".into()));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
    }
}

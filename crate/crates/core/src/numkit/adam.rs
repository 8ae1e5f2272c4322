use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 decay: added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for name in params.names() {
        match params.grad(name) {
            Some(g) if g.shape() == params.get(name).shape() => {}
            Some(_) => {
                return Err(Error::Consistency(format!(
                    "gradient for {name} has the wrong shape"
                )))
            }
            None => return Err(Error::Consistency(format!("missing gradient for {name}"))),
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p, g) in params.params_and_grads_mut() {
        let g = g.expect("checked above");
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let (pd, gd) = (p.data_mut(), g.data());
        for i in 0..pd.len() {
            let grad = gd[i] + cfg.weight_decay * pd[i];
            let mi = &mut m.data_mut()[i];
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * grad;
            let m_hat = *mi / bc1;
            let vi = &mut v.data_mut()[i];
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * grad * grad;
            let v_hat = *vi / bc2;
            pd[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::params::Grads;

    fn scalar_store(x: f64, g: f64) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.insert("x", Tensor::vector(vec![x]).unwrap()).unwrap();
        let mut grads = Grads::zeros_like(&ps);
        grads.get_mut("x").data_mut()[0] = g;
        ps.set_grads(grads).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = scalar_store(1.25, 0.0);
        let mut st = AdamState::new();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut ps, &mut st, &cfg).unwrap();
        assert_eq!(ps.get("x").data()[0], 1.25);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut ps = scalar_store(0.0, 0.5);
        let mut st = AdamState::new();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut ps, &mut st, &cfg).unwrap();
        let want = -cfg.lr * 0.5 / (0.5 + cfg.eps);
        assert!((ps.get("x").data()[0] - want).abs() < 1e-18);
        assert!((want + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn two_identical_steps_bias_corrected_moment_equals_gradient() {
        let g = 0.5;
        let mut ps = scalar_store(0.0, g);
        let mut st = AdamState::new();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut ps, &mut st, &cfg).unwrap();
        adam_step(&mut ps, &mut st, &cfg).unwrap();
        assert_eq!(st.t, 2);
        let m_hat = st.m["x"].data()[0] / (1.0 - cfg.beta1.powi(2));
        let v_hat = st.v["x"].data()[0] / (1.0 - cfg.beta2.powi(2));
        assert!((m_hat - g).abs() < 1e-15);
        assert!((v_hat - g * g).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_is_added_to_gradient() {
        let mut ps = scalar_store(2.0, 0.0);
        let mut st = AdamState::new();
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        adam_step(&mut ps, &mut st, &cfg).unwrap();
        assert!((st.m["x"].data()[0] - 0.1 * 0.2).abs() < 1e-15);
        assert!(ps.get("x").data()[0] < 2.0);
    }

    #[test]
    fn missing_gradient_is_consistency_error() {
        let mut ps = scalar_store(1.0, 1.0);
        ps.remove_grad("x");
        let err = adam_step(&mut ps, &mut AdamState::new(), &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }
}

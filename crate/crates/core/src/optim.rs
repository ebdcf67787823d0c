//! Adam with bias correction and optional weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{DadaError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply decay directly to the weights instead of adding `wd·θ` to the
    /// gradient.
    pub decoupled: bool,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            decoupled: false,
        }
    }

    pub fn validate(&self, group: &str) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(DadaError::config(format!("invalid Adam settings for '{group}': {self:?}")))
        }
    }
}

/// Moments for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub group: String,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Per-tensor step counts (frozen tensors do not advance).
    pub steps: Vec<u64>,
    /// Group updates performed.
    pub t: u64,
}

impl AdamState {
    pub fn new(group: impl Into<String>, params: &[&Tensor]) -> Self {
        Self {
            group: group.into(),
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            steps: vec![0; params.len()],
            t: 0,
        }
    }
}

/// One Adam step over a group. `grads[i] == None` marks a frozen tensor,
/// which is left untouched (no moment or decay update).
pub fn adam_update(params: &mut [&mut Tensor], grads: &[Option<Vec<f64>>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DadaError::contract(format!(
            "adam group '{}': {} params, {} grads, {} moment slots",
            state.group,
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        if g.len() != p.numel() || state.m[i].len() != p.numel() {
            return Err(DadaError::Dimension {
                op: "adam_update",
                lhs: p.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
        if let Some(k) = g.iter().position(|x| !x.is_finite()) {
            return Err(DadaError::numeric(format!(
                "non-finite gradient in parameter group '{}' (tensor {i}, coordinate {k})",
                state.group
            )));
        }
    }

    state.t += 1;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        state.steps[i] += 1;
        let t = state.steps[i] as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, theta) in p.data_mut().iter_mut().enumerate() {
            let grad = if cfg.decoupled {
                g[k]
            } else {
                g[k] + cfg.weight_decay * *theta
            };
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad * grad;
            let step = cfg.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.eps);
            if cfg.decoupled {
                *theta -= cfg.lr * cfg.weight_decay * *theta;
            }
            *theta -= step;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(theta: &mut Tensor, grad: Vec<f64>, state: &mut AdamState, cfg: &AdamConfig) {
        adam_update(&mut [theta], &[Some(grad)], state, cfg).unwrap();
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        let cfg = AdamConfig::new(0.01, 0.5, 0.999, 0.0);
        let mut theta = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let before = theta.clone();
        let mut st = AdamState::new("g", &[&theta]);
        run(&mut theta, vec![3.0, -0.2, 7.0], &mut st, &cfg);
        for (k, s) in [1.0, -1.0, 1.0].iter().enumerate() {
            let delta = theta.data()[k] - before.data()[k];
            assert!((delta + 0.01 * s).abs() < 1e-6, "{delta}");
        }
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = AdamConfig::new(0.01, 0.5, 0.999, 0.0);
        let mut theta = Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap();
        let before = theta.clone();
        let mut st = AdamState::new("g", &[&theta]);
        for _ in 0..5 {
            run(&mut theta, vec![0.0, 0.0], &mut st, &cfg);
        }
        assert_eq!(theta, before);
    }

    #[test]
    fn quadratic_bowl_descends() {
        let cfg = AdamConfig::new(0.05, 0.5, 0.999, 0.0);
        let mut theta = Tensor::matrix(1, 2, vec![2.0, -1.5]).unwrap();
        let mut st = AdamState::new("g", &[&theta]);
        let loss = |t: &Tensor| t.data().iter().map(|x| x * x).sum::<f64>();
        let mut trace = vec![loss(&theta)];
        for _ in 0..100 {
            let grad: Vec<f64> = theta.data().iter().map(|x| 2.0 * x).collect();
            run(&mut theta, grad, &mut st, &cfg);
            trace.push(loss(&theta));
        }
        for w in trace[5..].windows(2) {
            assert!(w[1] < w[0], "{w:?}");
        }
    }

    #[test]
    fn frozen_tensors_and_nan_diagnostic() {
        let cfg = AdamConfig::new(0.1, 0.5, 0.999, 1e-3);
        let mut a = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let mut b = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let mut st = AdamState::new("generator", &[&a, &b]);
        adam_update(&mut [&mut a, &mut b], &[None, Some(vec![1.0])], &mut st, &cfg).unwrap();
        assert_eq!(a.data()[0], 1.0);
        assert_ne!(b.data()[0], 1.0);
        assert_eq!(st.steps, vec![0, 1]);

        let err = adam_update(&mut [&mut a, &mut b], &[Some(vec![f64::NAN]), None], &mut st, &cfg).unwrap_err();
        assert!(err.to_string().contains("generator"), "{err}");
        assert_eq!(st.t, 1);
    }

    #[test]
    fn coupled_and_decoupled_decay_differ() {
        let mut c = AdamConfig::new(0.1, 0.5, 0.999, 0.5);
        let mut a = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let mut st = AdamState::new("g", &[&a]);
        run(&mut a, vec![0.0], &mut st, &c);
        // coupled: the decay term is the whole gradient, so the step is −lr
        assert!((a.data()[0] - 1.9).abs() < 1e-6);

        c.decoupled = true;
        let mut b = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let mut st = AdamState::new("g", &[&b]);
        run(&mut b, vec![0.0], &mut st, &c);
        assert!((b.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }
}

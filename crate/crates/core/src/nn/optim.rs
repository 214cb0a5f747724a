use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(&p.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(&p.shape)).collect(),
        }
    }
}

/// One bias-corrected Adam update. Non-finite gradients are rejected
/// before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<(), NnError> {
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(NnError::NonFiniteGradient);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = T::lit(1.0 / (1.0 - cfg.beta1.powi(t)));
    let c2 = T::lit(1.0 / (1.0 - cfg.beta2.powi(t)));
    let (b1, b2, eps, lr) = (T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.epsilon), T::lit(lr));
    let one = T::one();
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            *pi = *pi - lr * (*mi * c1) / ((*vi * c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Reduce-on-plateau learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: usize,
    /// New rate is `lr * factor`.
    pub factor: f64,
    /// Improvement must beat the best loss by more than this.
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 10,
            factor: 0.2,
            min_delta: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub config: PlateauConfig,
    pub lr: f64,
    best: f64,
    wait: usize,
}

impl Plateau {
    pub fn new(config: PlateauConfig, lr: f64) -> Self {
        Plateau {
            config,
            lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Record one epoch's validation loss; returns the rate for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.config.min_delta {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.config.patience {
                self.lr *= self.config.factor;
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Replay a validation-loss history and return the rate in effect after it.
pub fn plateau_replay(config: PlateauConfig, lr: f64, history: &[f64]) -> f64 {
    let mut p = Plateau::new(config, lr);
    for &l in history {
        p.observe(l);
    }
    p.lr
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_history_reduces_once_then_twice() {
        let cfg = PlateauConfig::default();
        let lr = plateau_replay(cfg, 0.001, &[1.0; 11]);
        assert!((lr - 0.0002).abs() < 1e-15);
        let lr = plateau_replay(cfg, 0.001, &[1.0; 21]);
        assert!((lr - 0.00004).abs() < 1e-16);
        let lr = plateau_replay(cfg, 0.001, &[1.0; 10]);
        assert_eq!(lr, 0.001);
    }

    #[test]
    fn improving_history_keeps_rate() {
        let hist: Vec<f64> = (0..40).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        assert_eq!(plateau_replay(PlateauConfig::default(), 0.001, &hist), 0.001);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::from_vec(&[2], vec![1.0f64, -1.0])];
        let g = vec![Tensor::from_vec(&[2], vec![0.5, -3.0])];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            epsilon: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &g, &mut st, &cfg, 0.01).unwrap();
        assert!((p[0].data[0] - 0.99).abs() < 1e-12);
        assert!((p[0].data[1] + 0.99).abs() < 1e-12);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut p = vec![Tensor::from_vec(&[1], vec![1.0f64])];
        let g = vec![Tensor::from_vec(&[1], vec![1.0])];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamConfig::default(), 0.001).unwrap();
        // m_hat = 1, v_hat = 1
        assert!((p[0].data[0] - (1.0 - 0.001 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_scale_invariant() {
        let run = |g: f64| {
            let mut p = vec![Tensor::from_vec(&[1], vec![0.5f64])];
            let mut st = AdamState::new(&p);
            let cfg = AdamConfig { epsilon: 0.0, ..AdamConfig::default() };
            adam_step(&mut p, &[Tensor::from_vec(&[1], vec![g])], &mut st, &cfg, 0.001).unwrap();
            p[0].data[0]
        };
        assert!((run(0.003) - run(3.0)).abs() < 1e-15);
        assert!((run(-0.003) - run(-3.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![Tensor::from_vec(&[3], vec![0.1f32, -0.2, 0.3])];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st, &AdamConfig::default(), 0.001).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_leaves_params_untouched() {
        let mut p = vec![Tensor::from_vec(&[2], vec![1.0f32, 2.0])];
        let before = p.clone();
        let g = vec![Tensor::from_vec(&[2], vec![f32::NAN, 0.0])];
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut st, &AdamConfig::default(), 0.001);
        assert!(matches!(err, Err(NnError::NonFiniteGradient)));
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }
}

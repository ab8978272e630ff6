//! SGD with Nesterov momentum and weight decay, plus the per-epoch linear
//! warmup / cosine decay learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-2,
            weight_decay: 1e-2,
            momentum: 0.9,
            warmup_epochs: 5,
            total_epochs: 50,
            batch_size: 64,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return bad("need 0 < warmup_epochs < total_epochs");
        }
        if !(self.base_lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("base_lr must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Learning rate for a 0-based epoch: a linear ramp reaching `base_lr` at
/// epoch `warmup_epochs - 1`, then half a cosine down toward zero.
pub fn lr_at(epoch: usize, cfg: &OptimConfig) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            total: cfg.total_epochs,
        });
    }
    if epoch < cfg.warmup_epochs {
        return Ok(cfg.base_lr * (epoch + 1) as f64 / cfg.warmup_epochs as f64);
    }
    let progress =
        (epoch - cfg.warmup_epochs) as f64 / (cfg.total_epochs - cfg.warmup_epochs) as f64;
    Ok(0.5 * cfg.base_lr * (1.0 + (PI * progress).cos()))
}

/// One Nesterov update of a flat parameter buffer:
///
/// ```text
/// g = grad + wd * p
/// v = mu * v + g
/// p = p - lr * (g + mu * v)
/// ```
pub fn nesterov_update(
    param: &mut [f64],
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "param {} / grad {} / velocity {}",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= lr * (g + momentum * *v);
    }
    Ok(())
}

/// Velocity buffers, one per parameter tensor, created lazily at the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimState {
    pub velocity: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: OptimConfig,
    pub state: OptimState,
}

impl Sgd {
    pub fn new(cfg: OptimConfig) -> Self {
        Self {
            cfg,
            state: OptimState::default(),
        }
    }

    /// Applies one update to every parameter with its accumulated gradient.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) -> Result<()> {
        if self.state.velocity.is_empty() {
            self.state.velocity = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        if self.state.velocity.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {}",
                self.state.velocity.len(),
                params.len()
            )));
        }
        for (p, v) in params.into_iter().zip(&mut self.state.velocity) {
            let Param { value, grad } = p;
            nesterov_update(
                value.data_mut(),
                grad.data(),
                v,
                lr,
                self.cfg.momentum,
                self.cfg.weight_decay,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn schedule_examples() {
        let cfg = OptimConfig::default();
        assert!((lr_at(0, &cfg).unwrap() - 2e-3).abs() < 1e-15);
        assert!((lr_at(4, &cfg).unwrap() - 1e-2).abs() < 1e-15);
        assert!((lr_at(5, &cfg).unwrap() - 1e-2).abs() < 1e-15);
        let last = lr_at(49, &cfg).unwrap();
        let expected = 0.5 * 1e-2 * (1.0 + (44.0 * PI / 45.0).cos());
        assert!((last - expected).abs() < 1e-15);
        assert!((last - 1.22e-5).abs() < 5e-8);
        assert!(matches!(
            lr_at(50, &cfg),
            Err(Error::EpochOutOfRange {
                epoch: 50,
                total: 50
            })
        ));
    }

    #[test]
    fn schedule_never_restarts() {
        let cfg = OptimConfig::default();
        let lrs: Vec<f64> = (0..50).map(|e| lr_at(e, &cfg).unwrap()).collect();
        assert!(lrs[..5].windows(2).all(|w| w[1] > w[0]));
        assert!(lrs[5..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn plain_sgd_when_no_momentum_or_decay() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        nesterov_update(&mut p, &[0.5, 1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn two_step_trace() {
        let (mut w, mut v) = (vec![0.0], vec![0.0]);
        nesterov_update(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && (w[0] + 0.19).abs() < 1e-12);
        nesterov_update(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v[0] - 1.9).abs() < 1e-12 && (w[0] + 0.461).abs() < 1e-12);
    }

    #[test]
    fn pure_decay_shrinks_geometrically() {
        let (mut w, mut v) = (vec![2.0], vec![0.0]);
        for k in 1..=5 {
            nesterov_update(&mut w, &[0.0], &mut v, 0.1, 0.0, 0.5).unwrap();
            assert!((w[0] - 2.0 * 0.95f64.powi(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradients_keep_velocity_zero() {
        let mut params = [
            Param::new(Tensor::full(&[3], 1.0)),
            Param::new(Tensor::full(&[2, 2], -1.0)),
        ];
        let mut opt = Sgd::new(OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        });
        for _ in 0..4 {
            opt.step(params.iter_mut().collect(), 0.1).unwrap();
        }
        assert!(opt.state.velocity.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(params[0].value.data(), &[1.0; 3]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        assert!(matches!(
            nesterov_update(&mut p, &[f64::NAN], &mut v, 0.1, 0.9, 0.0),
            Err(Error::NonFiniteGradient)
        ));
        assert!(matches!(
            nesterov_update(&mut p, &[1.0, 2.0], &mut v, 0.1, 0.9, 0.0),
            Err(Error::ShapeMismatch(_))
        ));
        let cfg = OptimConfig {
            momentum: 1.0,
            ..OptimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}

//! Adam optimizer with bias correction and a hold-then-linear-decay learning
//! rate schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("lr schedule invalid: total_steps {total} must exceed hold_steps {hold}")]
    BadSchedule { hold: u64, total: u64 },
}

/// Learning rate: `base_lr` while `step < hold_steps`, then a linear ramp
/// hitting zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub hold_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, hold_steps: u64, total_steps: u64) -> Result<Self, AdamError> {
        if total_steps <= hold_steps {
            return Err(AdamError::BadSchedule { hold: hold_steps, total: total_steps });
        }
        Ok(Self { base_lr, hold_steps, total_steps })
    }

    /// Constant learning rate (decay pushed beyond any reachable step).
    pub fn constant(base_lr: f64) -> Self {
        Self { base_lr, hold_steps: u64::MAX - 1, total_steps: u64::MAX }
    }
}

pub fn lr_at(step: u64, schedule: &LrSchedule) -> f64 {
    if step < schedule.hold_steps {
        schedule.base_lr
    } else if step >= schedule.total_steps {
        0.0
    } else {
        let remaining = (schedule.total_steps - step) as f64;
        let span = (schedule.total_steps - schedule.hold_steps) as f64;
        schedule.base_lr * remaining / span
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter and
/// schedule.
pub struct AdamState {
    cfg: AdamConfig,
    schedule: LrSchedule,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(param_shapes: &[Vec<usize>], cfg: AdamConfig, schedule: LrSchedule) -> Self {
        let m = param_shapes.iter().map(|s| Tensor::zeros(s)).collect();
        let v = param_shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Self { cfg, schedule, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate the next [`AdamState::apply`] call will use.
    pub fn current_lr(&self) -> f64 {
        lr_at(self.step, &self.schedule)
    }

    /// One bias-corrected Adam update over all parameters.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        let lr = lr_at(self.step, &self.schedule);
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.cfg.beta1.powi(t);
        let bias2 = 1.0 - self.cfg.beta2.powi(t);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert!(
                param.same_shape(grad),
                "gradient shape {:?} does not match parameter shape {:?}",
                grad.shape(),
                param.shape()
            );
            for ((p, &g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * g;
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_with_unit_gradient() {
        let mut p = Tensor::zeros(&[3]);
        let g = Tensor::filled(&[3], 1.0);
        let mut adam = AdamState::new(
            &[vec![3]],
            AdamConfig::default(),
            LrSchedule::constant(0.0002),
        );
        adam.apply(&mut [&mut p], &[g]);
        // m_hat = v_hat = 1 on the first step, so the update is -lr/(1+eps).
        let expected = -0.0002 / (1.0 + 1e-8);
        for &v in p.data() {
            assert!((v - expected).abs() < 1e-18, "{v} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::new(&[2], vec![1.5, -0.5]);
        let g = Tensor::zeros(&[2]);
        let mut adam = AdamState::new(
            &[vec![2]],
            AdamConfig::default(),
            LrSchedule::constant(0.01),
        );
        adam.apply(&mut [&mut p], &[g.clone()]);
        adam.apply(&mut [&mut p], &[g]);
        assert_eq!(p.data(), &[1.5, -0.5]);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]);
            let mut adam = AdamState::new(
                &[vec![4]],
                AdamConfig::default(),
                LrSchedule::new(0.001, 2, 10).unwrap(),
            );
            for i in 0..10u64 {
                let g = Tensor::new(&[4], vec![0.5, -0.25, (i as f64).sin(), 1.0]);
                adam.apply(&mut [&mut p], &[g]);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(0.0002, 100, 200).unwrap();
        assert_eq!(lr_at(0, &s), 0.0002);
        assert_eq!(lr_at(99, &s), 0.0002);
        assert_eq!(lr_at(150, &s), 0.0001);
        assert_eq!(lr_at(200, &s), 0.0);
        assert_eq!(lr_at(10_000, &s), 0.0);
        assert!(LrSchedule::new(0.1, 5, 5).is_err());
    }
}

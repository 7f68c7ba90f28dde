use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            config,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.len() || grad.len() != self.len() {
            return Err(Error::LengthMismatch {
                context: "adam step",
                left: params.len().max(grad.len()),
                right: self.len(),
            });
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(
    mut state: AdamState,
    mut params: Vec<f64>,
    grad: &[f64],
) -> Result<(Vec<f64>, AdamState)> {
    state.step(&mut params, grad)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = vec![0.5, -1.0, 2.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_hand_value() {
        let s = AdamState::new(1, AdamConfig::default());
        let (p, s) = adam_step(s, vec![0.0], &[0.5]).unwrap();
        // m_hat = 0.5, v_hat = 0.25 => step = lr * 0.5 / (0.5 + 1e-8)
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert_eq!(p[0], expected);
        assert!((p[0] + 0.0009999999800000004).abs() < 1e-15);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn two_steps_hand_unrolled() {
        let (lr, b1, b2, eps, g) = (1e-3, 0.9, 0.999, 1e-8, 0.5);
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        s.step(&mut p, &[g]).unwrap();
        s.step(&mut p, &[g]).unwrap();
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let th1 = -lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let th2 = th1
            - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((p[0] - th2).abs() < 1e-18);
        assert_eq!(s.step_count, 2);
        assert!(s.second_moment[0] >= 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0; 3];
        assert!(s.step(&mut p, &[0.0; 3]).is_err());
        let mut p = vec![0.0; 2];
        assert!(s.step(&mut p, &[0.0; 1]).is_err());
    }
}

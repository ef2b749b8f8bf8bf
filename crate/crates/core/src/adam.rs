//! Adam with bias correction and per-slot step counters.
//!
//! Slots that are masked out of an update keep their moments and their step
//! counter untouched, so a parameter that sits out a mini-batch resumes with
//! exactly the state it had.

use serde::{Deserialize, Serialize};

use crate::error::{AdbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
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

/// First/second moment estimates and step counts, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Applies one Adam update to `params` in place. `mask[i] == false` skips slot `i`.
    pub fn update(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [f64],
        grads: &[f64],
        mask: Option<&[bool]>,
    ) -> Result<()> {
        let n = self.len();
        if params.len() != n {
            return Err(AdbError::dim(n, params.len()));
        }
        if grads.len() != n {
            return Err(AdbError::dim(n, grads.len()));
        }
        if let Some(mask) = mask {
            if mask.len() != n {
                return Err(AdbError::dim(n, mask.len()));
            }
        }
        for i in 0..n {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i];
            self.steps[i] += 1;
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let t = self.steps[i] as i32;
            let m_hat = self.m[i] / (1.0 - cfg.beta1.powi(t));
            let v_hat = self.v[i] / (1.0 - cfg.beta2.powi(t));
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::with_learning_rate(0.05);
        for g in [1e-3, 0.7, -3.0, 250.0] {
            let mut state = AdamState::new(1);
            let mut p = [0.4];
            state.update(&cfg, &mut p, &[g], None).unwrap();
            let moved = 0.4 - p[0];
            assert!(
                (moved - 0.05 * g.signum()).abs() < 1e-5 * 0.05 + 1e-9,
                "g={g} moved={moved}"
            );
        }
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(3);
        let mut p = [1.0, -2.0, 0.5];
        state.update(&cfg, &mut p, &[0.0; 3], None).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn masked_slot_untouched() {
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(2);
        let mut p = [1.0, 1.0];
        state
            .update(&cfg, &mut p, &[1.0, 1.0], Some(&[true, false]))
            .unwrap();
        assert_eq!(p[1], 1.0);
        assert_eq!(state.m[1], 0.0);
        assert_eq!(state.v[1], 0.0);
        assert_eq!(state.steps, vec![1, 0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut state = AdamState::new(2);
        let mut p = [0.0; 3];
        assert!(state
            .update(&AdamConfig::default(), &mut p, &[0.0; 3], None)
            .is_err());
    }
}

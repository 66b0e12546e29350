use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
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

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// Non-finite gradients are rejected before any state changes.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                context: "adam step",
                expected: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NanGradient(i));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // t = 1: m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps).
        let lr = 1e-4;
        let g = [3.0, -0.02, 1e-3];
        let mut st = AdamState::new(3, AdamConfig::with_lr(lr));
        let mut p = vec![0.0; 3];
        st.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expect = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expect).abs() < 1e-18);
            assert!((pi + lr * gi.signum()).abs() < lr * 1e-4);
        }
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // Iterating the recurrence: m_hat -> g and v_hat -> g^2, so |step| -> lr.
        let lr = 0.01;
        let mut st = AdamState::new(1, AdamConfig::with_lr(lr));
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            st.step(&mut p, &[0.7]).unwrap();
            last = before - p[0];
            assert!(last <= lr * (1.0 + 1e-9));
        }
        assert!((last - lr).abs() < 1e-8 * lr.max(1.0));
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0, 0.0];
        assert!(matches!(st.step(&mut p, &[0.0, f64::NAN]), Err(Error::NanGradient(1))));
        assert_eq!(st.t, 0);
        assert!(st.step(&mut p, &[0.0]).is_err());
    }
}

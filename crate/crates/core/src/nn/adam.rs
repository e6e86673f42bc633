//! Adam optimizer on a flat parameter vector.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Learning-rate schedule shared by every training loop: full rate over the
/// first half of the run, then linear decay to 10% by the final step. The
/// taper settles the iterates below the constant-rate noise floor of the
/// noisy regression targets.
pub fn scheduled_lr(base: f64, iteration: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let progress = iteration as f64 / (total - 1) as f64;
    if progress <= 0.5 {
        base
    } else {
        base * (1.0 - 0.9 * (2.0 * progress - 1.0))
    }
}

/// Optimizer state: step count and first/second moment accumulators.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Second-moment accumulator (diagnostic access).
    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected update: theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Domain("Adam received a non-finite gradient".into()));
        }
        self.step += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
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
        st.step(&mut p, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // Bias correction makes m_hat/sqrt(v_hat) = g/|g| on step one.
        let cfg = AdamConfig::with_lr(0.01);
        let mut st = AdamState::new(2, cfg);
        let mut p = vec![0.0, 0.0];
        st.step(&mut p, &[3.0, -0.2]).unwrap();
        assert!((p[0] + 0.01).abs() < 1e-6);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn second_moment_monotone() {
        let mut st = AdamState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0]).unwrap();
        let v1 = st.second_moments()[0];
        st.step(&mut p, &[-1.0]).unwrap();
        let v2 = st.second_moments()[0];
        assert!(v2 >= v1);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut st = AdamState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        assert!(st.step(&mut p, &[f64::NAN]).is_err());
    }
}

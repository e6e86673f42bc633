//! Closed-form transition quantities of the unit-diffusion OU process
//! dX_t = -X_t/2 dt + dB_t, whose stationary law is the standard normal.

use crate::{Error, Result};

/// Mean scale and variance of the OU transition over an elapsed time t:
/// X_t | X_0 = x0 is normal with mean alpha(t) x0 and covariance v(t) I.
#[derive(Debug, Clone, Copy)]
pub struct OuTransition {
    pub elapsed: f64,
    /// Mean scale alpha(t) = exp(-t/2).
    pub alpha: f64,
    /// Variance v(t) = 1 - exp(-t); alpha^2 + v = 1.
    pub var: f64,
}

impl OuTransition {
    pub fn new(elapsed: f64) -> Result<Self> {
        if !(elapsed > 0.0) || !elapsed.is_finite() {
            return Err(Error::Domain(format!(
                "OU transition needs a positive elapsed time, got {elapsed}"
            )));
        }
        let alpha = (-0.5 * elapsed).exp();
        Ok(Self {
            elapsed,
            alpha,
            var: 1.0 - alpha * alpha,
        })
    }

    /// Gradient of log p_{t|0}(xt | x0) with respect to xt:
    /// (alpha x0 - xt) / v, coordinatewise.
    pub fn score(&self, x0: &[f64], xt: &[f64]) -> Vec<f64> {
        x0.iter()
            .zip(xt)
            .map(|(a, b)| (self.alpha * a - b) / self.var)
            .collect()
    }

    /// Log transition density log N(xt; alpha x0, v I).
    pub fn logpdf(&self, x0: &[f64], xt: &[f64]) -> f64 {
        let mean: Vec<f64> = x0.iter().map(|a| self.alpha * a).collect();
        crate::math::isotropic_normal_logpdf(xt, &mean, self.var)
    }
}

/// (alpha, v) of the OU transition over elapsed time t.
pub fn ou_moments(t: f64) -> Result<(f64, f64)> {
    let tr = OuTransition::new(t)?;
    Ok((tr.alpha, tr.var))
}

/// Transition score (alpha(t) x0 - xt) / v(t).
pub fn ou_transition_score(x0: &[f64], xt: &[f64], t: f64) -> Result<Vec<f64>> {
    Ok(OuTransition::new(t)?.score(x0, xt))
}

/// Marginal of the OU process at time t >= 0 started from N(m0, s0sq I):
/// mean exp(-t/2) m0 and isotropic variance s0sq e^{-t} + 1 - e^{-t}.
pub fn ou_gaussian_marginal(m0: &[f64], s0sq: f64, t: f64) -> Result<(Vec<f64>, f64)> {
    if s0sq < 0.0 {
        return Err(Error::Domain(format!("initial variance must be >= 0, got {s0sq}")));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("elapsed time must be >= 0, got {t}")));
    }
    let decay = (-t).exp();
    let mean = m0.iter().map(|m| (-0.5 * t).exp() * m).collect();
    Ok((mean, s0sq * decay + 1.0 - decay))
}

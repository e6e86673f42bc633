//! Bayesian joint models: prior sampling, likelihood simulation and whatever
//! analytic posterior structure exists for validation.

use super::GaussianParams;
use crate::sde::OuTransition;
use crate::{Error, Prng, Result};

/// A joint model p(x, y) = mu(x) g(y | x) that can at minimum be simulated.
/// Analytic accessors return `None` when the model has no closed form.
pub trait JointModel: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    fn sample_prior(&self, rng: &mut Prng) -> Vec<f64>;
    fn simulate_likelihood(&self, x: &[f64], rng: &mut Prng) -> Vec<f64>;

    /// log g(y | x), when the likelihood can be evaluated.
    fn log_likelihood(&self, _x: &[f64], _y: &[f64]) -> Option<f64> {
        None
    }

    /// Gradient of log g(y | x) with respect to x.
    fn grad_x_log_likelihood(&self, _x: &[f64], _y: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Exact posterior p(x | y), when conjugate.
    fn analytic_posterior(&self, _y: &[f64]) -> Option<GaussianParams> {
        None
    }

    /// Exact score of the diffused posterior p_t(x_t | y) at forward time t.
    fn conditional_score(&self, _t: f64, _x: &[f64], _y: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Exact score of the diffused prior mu_t(x_t).
    fn prior_score(&self, _t: f64, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Exact gradient of the diffused log likelihood log g_t(y | x_t), when
    /// the joint law is tractable. Satisfies
    /// conditional_score = prior_score + exact_guidance.
    fn exact_guidance(&self, _t: f64, _x: &[f64], _y: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Conjugate linear-Gaussian model: x ~ N(0, s0sq I), y | x ~ N(a x, ssq I)
/// with observation coupling a (1 by default; a = 0 makes the observation
/// carry no information about x).
#[derive(Debug, Clone)]
pub struct ConjugateLinearGaussian {
    dim: usize,
    s0sq: f64,
    ssq: f64,
    coupling: f64,
}

impl ConjugateLinearGaussian {
    pub fn new(s0sq: f64, ssq: f64, dim: usize) -> Result<Self> {
        if !(s0sq > 0.0) || !(ssq > 0.0) {
            return Err(Error::Construction(format!(
                "variances must be positive, got s0sq = {s0sq}, ssq = {ssq}"
            )));
        }
        if dim == 0 {
            return Err(Error::Construction("dimension must be at least 1".into()));
        }
        Ok(Self {
            dim,
            s0sq,
            ssq,
            coupling: 1.0,
        })
    }

    pub fn with_coupling(mut self, a: f64) -> Self {
        self.coupling = a;
        self
    }

    pub fn prior_var(&self) -> f64 {
        self.s0sq
    }

    pub fn obs_var(&self) -> f64 {
        self.ssq
    }

    /// Posterior variance s0sq ssq / (ssq + a^2 s0sq), isotropic.
    pub fn posterior_var(&self) -> f64 {
        let a = self.coupling;
        self.s0sq * self.ssq / (self.ssq + a * a * self.s0sq)
    }

    /// Posterior mean factor: mean = factor * y (coordinatewise).
    pub fn posterior_mean_factor(&self) -> f64 {
        self.posterior_var() * self.coupling / self.ssq
    }
}

impl JointModel for ConjugateLinearGaussian {
    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn obs_dim(&self) -> usize {
        self.dim
    }

    fn sample_prior(&self, rng: &mut Prng) -> Vec<f64> {
        let s = self.s0sq.sqrt();
        (0..self.dim).map(|_| s * rng.standard_normal()).collect()
    }

    fn simulate_likelihood(&self, x: &[f64], rng: &mut Prng) -> Vec<f64> {
        let s = self.ssq.sqrt();
        x.iter()
            .map(|xi| self.coupling * xi + s * rng.standard_normal())
            .collect()
    }

    fn log_likelihood(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let mean: Vec<f64> = x.iter().map(|xi| self.coupling * xi).collect();
        Some(crate::math::isotropic_normal_logpdf(y, &mean, self.ssq))
    }

    fn grad_x_log_likelihood(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        Some(
            x.iter()
                .zip(y)
                .map(|(xi, yi)| self.coupling * (yi - self.coupling * xi) / self.ssq)
                .collect(),
        )
    }

    fn analytic_posterior(&self, y: &[f64]) -> Option<GaussianParams> {
        let factor = self.posterior_mean_factor();
        let mean = y.iter().map(|yi| factor * yi).collect();
        GaussianParams::isotropic(mean, self.posterior_var()).ok()
    }

    fn conditional_score(&self, t: f64, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        // x_t | y is normal with mean alpha * m_post and variance
        // alpha^2 v_post + v(t).
        let (alpha, v) = if t == 0.0 {
            (1.0, 0.0)
        } else {
            let tr = OuTransition::new(t).ok()?;
            (tr.alpha, tr.var)
        };
        let factor = self.posterior_mean_factor();
        let var_t = alpha * alpha * self.posterior_var() + v;
        Some(
            x.iter()
                .zip(y)
                .map(|(xi, yi)| -(xi - alpha * factor * yi) / var_t)
                .collect(),
        )
    }

    fn prior_score(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let tr = OuTransition::new(t).ok()?;
        let var_t = tr.alpha * tr.alpha * self.s0sq + tr.var;
        Some(x.iter().map(|xi| -xi / var_t).collect())
    }

    fn exact_guidance(&self, t: f64, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        // Under the diffused joint law, y | x_t is normal with mean
        // a c_t x_t and variance a^2 w_t + ssq, where c_t and w_t are the
        // posterior mean factor and variance of x_0 | x_t under the prior.
        let tr = OuTransition::new(t).ok()?;
        let a = self.coupling;
        let prior_t = tr.alpha * tr.alpha * self.s0sq + tr.var;
        let c_t = tr.alpha * self.s0sq / prior_t;
        let w_t = self.s0sq * tr.var / prior_t;
        let obs_var = a * a * w_t + self.ssq;
        Some(
            x.iter()
                .zip(y)
                .map(|(xi, yi)| a * c_t * (yi - a * c_t * xi) / obs_var)
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::gauss_legendre;

    #[test]
    fn posterior_closed_form() {
        let m = ConjugateLinearGaussian::new(1.0, 1.0, 1).unwrap();
        let post = m.analytic_posterior(&[2.0]).unwrap();
        assert!((post.mean()[0] - 1.0).abs() < 1e-14);
        assert!((post.var(0) - 0.5).abs() < 1e-14);
        // y = 0 centers the posterior by symmetry.
        let post0 = m.analytic_posterior(&[0.0]).unwrap();
        assert!(post0.mean()[0].abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_quadrature() {
        // Posterior density from Bayes' rule by quadrature, to 1e-8.
        let m = ConjugateLinearGaussian::new(0.8, 0.5, 1).unwrap();
        let y = [1.3];
        let post = m.analytic_posterior(&y).unwrap();
        let (nodes, weights) = gauss_legendre(400, -12.0, 12.0);
        let joint = |x: f64| {
            let lx = crate::math::normal_logpdf(x, 0.0, 0.8);
            let ly = m.log_likelihood(&[x], &y).unwrap();
            (lx + ly).exp()
        };
        let evidence: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * joint(*x)).sum();
        for x in [-0.5, 0.3, 1.0] {
            let numeric = joint(x) / evidence;
            let analytic = post.logpdf(&[x]).exp();
            assert!((numeric - analytic).abs() < 1e-8, "{numeric} vs {analytic}");
        }
    }

    #[test]
    fn conditional_score_consistency() {
        // conditional score = prior score + guidance, exactly.
        let m = ConjugateLinearGaussian::new(1.4, 0.6, 2).unwrap().with_coupling(0.9);
        let y = [0.7, -1.2];
        for t in [0.05, 0.5, 2.0] {
            for x in [[0.2, 0.4], [-1.0, 1.5]] {
                let cond = m.conditional_score(t, &x, &y).unwrap();
                let prior = m.prior_score(t, &x).unwrap();
                let guide = m.exact_guidance(t, &x, &y).unwrap();
                for i in 0..2 {
                    assert!(
                        (cond[i] - prior[i] - guide[i]).abs() < 1e-12,
                        "t = {t}: {} vs {}",
                        cond[i],
                        prior[i] + guide[i]
                    );
                }
            }
        }
    }

    #[test]
    fn simulated_pairs_recover_posterior_slope() {
        // Regressing x on y recovers the posterior mean factor
        // s0sq / (s0sq + ssq) within Monte Carlo error.
        let m = ConjugateLinearGaussian::new(1.0, 1.0, 1).unwrap();
        let mut rng = Prng::seed_from(31);
        let n = 50_000;
        let (mut sxy, mut syy) = (0.0, 0.0);
        for _ in 0..n {
            let x = m.sample_prior(&mut rng);
            let y = m.simulate_likelihood(&x, &mut rng);
            assert!(x[0].is_finite() && y[0].is_finite());
            sxy += x[0] * y[0];
            syy += y[0] * y[0];
        }
        let slope = sxy / syy;
        // slope estimator standard error ~ sqrt(v_post / (n * var(y))).
        let se = (0.5f64 / (n as f64 * 2.0)).sqrt();
        assert!((slope - 0.5).abs() < 3.0 * se, "slope = {slope}");
    }

    #[test]
    fn zero_coupling_posterior_is_prior() {
        let m = ConjugateLinearGaussian::new(1.7, 0.3, 1).unwrap().with_coupling(0.0);
        let post = m.analytic_posterior(&[5.0]).unwrap();
        assert!(post.mean()[0].abs() < 1e-15);
        assert!((post.var(0) - 1.7).abs() < 1e-12);
        let g = m.exact_guidance(0.5, &[0.3], &[5.0]).unwrap();
        assert!(g[0].abs() < 1e-15);
    }

    #[test]
    fn construction_errors() {
        assert!(ConjugateLinearGaussian::new(0.0, 1.0, 1).is_err());
        assert!(ConjugateLinearGaussian::new(1.0, -1.0, 1).is_err());
        assert!(ConjugateLinearGaussian::new(1.0, 1.0, 0).is_err());
    }
}

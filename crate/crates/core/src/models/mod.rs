//! Target distributions and Bayesian joint models, each bundled with the
//! analytic ground truth available for testing.

mod joint;

pub use joint::{ConjugateLinearGaussian, JointModel};

use crate::math::{
    chol_logdet, chol_solve, cholesky, gauss_legendre, isotropic_normal_logpdf, logsumexp,
    lower_tri_mul, LN_2PI,
};
use crate::sde::OuTransition;
use crate::{Error, Prng, Result};

/// Mean and covariance of a nondegenerate Gaussian, with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Vec<f64>,
}

impl GaussianParams {
    /// Builds from a mean and a row-major covariance; the covariance must be
    /// symmetric positive definite.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::Construction(format!(
                "covariance must be {d}x{d}, got {} entries",
                cov.len()
            )));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[i * d + j] - cov[j * d + i]).abs() > 1e-12 {
                    return Err(Error::Construction("covariance must be symmetric".into()));
                }
            }
        }
        let chol = cholesky(&cov, d)
            .ok_or_else(|| Error::Construction("covariance is not positive definite".into()))?;
        Ok(Self { mean, cov, chol })
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = var;
        }
        Self::new(mean, cov)
    }

    pub fn standard(d: usize) -> Self {
        Self::isotropic(vec![0.0; d], 1.0).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    /// Marginal variance of coordinate i.
    pub fn var(&self, i: usize) -> f64 {
        self.cov[i * self.dim() + i]
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let sol = chol_solve(&self.chol, d, &diff);
        let maha: f64 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum();
        -0.5 * (d as f64 * LN_2PI + chol_logdet(&self.chol, d) + maha)
    }

    /// Gradient of the log density: -Sigma^{-1} (x - mean).
    pub fn grad_logpdf(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        chol_solve(&self.chol, d, &diff).iter().map(|v| -v).collect()
    }

    pub fn sample(&self, rng: &mut Prng) -> Vec<f64> {
        let d = self.dim();
        let z = rng.normal_vec(d);
        let lz = lower_tri_mul(&self.chol, d, &z);
        lz.iter().zip(&self.mean).map(|(a, b)| a + b).collect()
    }

    /// Law of the OU noising process at elapsed time t >= 0 started from this
    /// Gaussian: N(alpha mean, alpha^2 Sigma + v I).
    pub fn diffused(&self, t: f64) -> Result<GaussianParams> {
        if t == 0.0 {
            return Ok(self.clone());
        }
        let tr = OuTransition::new(t)?;
        let d = self.dim();
        let mean = self.mean.iter().map(|m| tr.alpha * m).collect();
        let mut cov: Vec<f64> = self.cov.iter().map(|c| tr.alpha * tr.alpha * c).collect();
        for i in 0..d {
            cov[i * d + i] += tr.var;
        }
        GaussianParams::new(mean, cov)
    }
}

#[derive(Clone)]
enum TargetKind {
    /// log gamma = log_scale + log N(mean, cov).
    Gaussian { params: GaussianParams, log_scale: f64 },
    /// log gamma = log sum_i w_i N(mu_i, Sigma_i).
    Mixture {
        log_weights: Vec<f64>,
        components: Vec<GaussianParams>,
    },
    /// Funnel in two dimensions: x0 ~ N(0, scale^2), x1 | x0 ~ N(0, e^{x0}).
    Funnel { scale: f64 },
}

/// An unnormalized target density gamma with its gradient, and whatever
/// analytic structure exists for testing (normalizer, diffused score).
#[derive(Clone)]
pub struct TargetDensity {
    dim: usize,
    kind: TargetKind,
    known_log_z: Option<f64>,
}

impl TargetDensity {
    /// Gaussian target scaled by a positive constant; the normalizer is then
    /// known exactly (log Z = log scale).
    pub fn gaussian(params: GaussianParams, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Construction(format!("scale must be positive, got {scale}")));
        }
        Ok(Self {
            dim: params.dim(),
            known_log_z: Some(scale.ln()),
            kind: TargetKind::Gaussian {
                params,
                log_scale: scale.ln(),
            },
        })
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::gaussian(GaussianParams::standard(d), 1.0).unwrap()
    }

    /// Normalized Gaussian mixture; weights must be positive and sum to one.
    pub fn gaussian_mixture(weights: Vec<f64>, components: Vec<GaussianParams>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Construction("mixture needs at least one component".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::Construction("one weight per component required".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Construction("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Construction(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::Construction("mixture components must share a dimension".into()));
        }
        Ok(Self {
            dim,
            known_log_z: Some(0.0),
            kind: TargetKind::Mixture {
                log_weights: weights.iter().map(|w| w.ln()).collect(),
                components,
            },
        })
    }

    /// Two-dimensional funnel density with x0 ~ N(0, scale^2) and
    /// x1 | x0 ~ N(0, e^{x0}); normalized, no analytic diffused score.
    pub fn funnel(scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Construction(format!("funnel scale must be positive, got {scale}")));
        }
        Ok(Self {
            dim: 2,
            known_log_z: Some(0.0),
            kind: TargetKind::Funnel { scale },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// log Z when the normalizer is known (used only by tests and metrics).
    pub fn known_log_z(&self) -> Option<f64> {
        self.known_log_z
    }

    /// Unnormalized log density log gamma(x).
    pub fn log_gamma(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::Gaussian { params, log_scale } => log_scale + params.logpdf(x),
            TargetKind::Mixture {
                log_weights,
                components,
            } => {
                let terms: Vec<f64> = log_weights
                    .iter()
                    .zip(components)
                    .map(|(lw, c)| lw + c.logpdf(x))
                    .collect();
                logsumexp(&terms)
            }
            TargetKind::Funnel { scale } => {
                let v = x[0].exp();
                crate::math::normal_logpdf(x[0], 0.0, scale * scale)
                    + crate::math::normal_logpdf(x[1], 0.0, v)
            }
        }
    }

    /// Gradient of log gamma.
    pub fn grad_log_gamma(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            TargetKind::Gaussian { params, .. } => params.grad_logpdf(x),
            TargetKind::Mixture {
                log_weights,
                components,
            } => {
                let logs: Vec<f64> = log_weights
                    .iter()
                    .zip(components)
                    .map(|(lw, c)| lw + c.logpdf(x))
                    .collect();
                let total = logsumexp(&logs);
                let mut g = vec![0.0; self.dim];
                for (li, c) in logs.iter().zip(components) {
                    let r = (li - total).exp();
                    for (gi, si) in g.iter_mut().zip(c.grad_logpdf(x)) {
                        *gi += r * si;
                    }
                }
                g
            }
            TargetKind::Funnel { scale } => {
                let ev = (-x[0]).exp();
                vec![
                    -x[0] / (scale * scale) - 0.5 + 0.5 * x[1] * x[1] * ev,
                    -x[1] * ev,
                ]
            }
        }
    }

    /// Analytic score of the OU-diffused law at elapsed time t, where closed
    /// forms exist (Gaussians and their mixtures).
    pub fn diffused_score(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            TargetKind::Gaussian { params, .. } => {
                Some(params.diffused(t).ok()?.grad_logpdf(x))
            }
            TargetKind::Mixture {
                log_weights,
                components,
            } => {
                let diffused: Vec<GaussianParams> =
                    components.iter().map(|c| c.diffused(t)).collect::<Result<_>>().ok()?;
                let logs: Vec<f64> = log_weights
                    .iter()
                    .zip(&diffused)
                    .map(|(lw, c)| lw + c.logpdf(x))
                    .collect();
                let total = logsumexp(&logs);
                let mut g = vec![0.0; self.dim];
                for (li, c) in logs.iter().zip(&diffused) {
                    let r = (li - total).exp();
                    for (gi, si) in g.iter_mut().zip(c.grad_logpdf(x)) {
                        *gi += r * si;
                    }
                }
                Some(g)
            }
            TargetKind::Funnel { .. } => None,
        }
    }

    /// Analytic log density of the normalized OU-diffused law, where closed
    /// forms exist.
    pub fn diffused_logpdf(&self, t: f64, x: &[f64]) -> Option<f64> {
        match &self.kind {
            TargetKind::Gaussian { params, .. } => Some(params.diffused(t).ok()?.logpdf(x)),
            TargetKind::Mixture {
                log_weights,
                components,
            } => {
                let logs: Vec<f64> = log_weights
                    .iter()
                    .zip(components)
                    .map(|(lw, c)| Some(lw + c.diffused(t).ok()?.logpdf(x)))
                    .collect::<Option<_>>()?;
                Some(logsumexp(&logs))
            }
            TargetKind::Funnel { .. } => None,
        }
    }

    /// Draws from the normalized target where an exact sampler exists
    /// (all built-in targets have one; used by oracles and metrics).
    pub fn sample_exact(&self, rng: &mut Prng) -> Option<Vec<f64>> {
        match &self.kind {
            TargetKind::Gaussian { params, .. } => Some(params.sample(rng)),
            TargetKind::Mixture {
                log_weights,
                components,
            } => {
                let u: f64 = rng.uniform(0.0, 1.0);
                let mut acc = 0.0;
                for (lw, c) in log_weights.iter().zip(components) {
                    acc += lw.exp();
                    if u <= acc {
                        return Some(c.sample(rng));
                    }
                }
                Some(components.last().unwrap().sample(rng))
            }
            TargetKind::Funnel { scale } => {
                let x0 = scale * rng.standard_normal();
                let x1 = (0.5 * x0).exp() * rng.standard_normal();
                Some(vec![x0, x1])
            }
        }
    }
}

/// Numerically diffuses the target by the OU kernel:
/// int N(x; alpha(t) x0, v(t) I) p(x0) dx0 with p = gamma / exp(known log Z),
/// by Gauss–Legendre quadrature (400 nodes per axis on [-12, 12]).
///
/// Only dimensions 1 and 2 are supported; this is a test oracle, not a
/// production path.
pub fn quadrature_diffused_density(target: &TargetDensity, t: f64, x: &[f64]) -> Result<f64> {
    if target.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "quadrature oracle supports d <= 2, got d = {}",
            target.dim()
        )));
    }
    if x.len() != target.dim() {
        return Err(Error::Domain("point dimension must match the target".into()));
    }
    let tr = OuTransition::new(t)?;
    let log_z = target.known_log_z.unwrap_or(0.0);
    let (nodes, weights) = gauss_legendre(400, -12.0, 12.0);
    let mut total = 0.0;
    if target.dim() == 1 {
        for (n, w) in nodes.iter().zip(&weights) {
            let x0 = [*n];
            let kernel = isotropic_normal_logpdf(x, &[tr.alpha * n], tr.var);
            total += w * (kernel + target.log_gamma(&x0) - log_z).exp();
        }
    } else {
        for (n0, w0) in nodes.iter().zip(&weights) {
            for (n1, w1) in nodes.iter().zip(&weights) {
                let x0 = [*n0, *n1];
                let mean = [tr.alpha * n0, tr.alpha * n1];
                let kernel = isotropic_normal_logpdf(x, &mean, tr.var);
                total += w0 * w1 * (kernel + target.log_gamma(&x0) - log_z).exp();
            }
        }
    }
    Ok(total)
}

//! Sample-quality metrics: moment errors, Kolmogorov–Smirnov statistics,
//! importance-weight diagnostics and histogram comparisons.

use crate::math::{ks_statistic, logsumexp, normal_cdf};
use crate::models::GaussianParams;
use crate::{Error, Result};
use serde::Serialize;

/// Machine-readable record of a run's quality metrics.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub n_samples: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Per-dimension |mean - reference mean|, when a reference is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_error: Option<Vec<f64>>,
    /// Per-dimension |variance - reference variance|.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_error: Option<Vec<f64>>,
    /// Per-dimension KS statistic against the reference marginal CDFs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<f64>>,
    /// Effective sample size of the importance weights, (sum w)^2 / sum w^2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    /// log of the importance-sampling normalizer estimate, when weights exist.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_z_is: Option<f64>,
    /// log-normalizer estimate from the probability flow, when computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_z_flow: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl MetricsRecord {
    pub const SCHEMA_VERSION: u32 = 1;
}

/// Computes moments, reference errors, per-dimension KS statistics and
/// importance-weight diagnostics for a set of samples.
///
/// `log_weights`, when present, must be one per sample; the reference, when
/// present, supplies exact marginal means/variances and Gaussian CDFs.
pub fn eval_metrics(
    samples: &[Vec<f64>],
    log_weights: Option<&[f64]>,
    reference: Option<&GaussianParams>,
) -> Result<MetricsRecord> {
    if samples.is_empty() {
        return Err(Error::Metrics("no samples to evaluate".into()));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::Metrics("inconsistent sample dimensions".into()));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Metrics("samples contain non-finite values".into()));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            mean[i] += s[i];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut variance = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            let z = s[i] - mean[i];
            variance[i] += z * z;
        }
    }
    for v in variance.iter_mut() {
        *v /= n;
    }

    let (mean_error, variance_error, ks) = if let Some(r) = reference {
        if r.dim() != d {
            return Err(Error::Metrics("reference dimension mismatch".into()));
        }
        let me = mean
            .iter()
            .zip(r.mean())
            .map(|(a, b)| (a - b).abs())
            .collect();
        let ve = (0..d).map(|i| (variance[i] - r.var(i)).abs()).collect();
        let mut ks_dims = Vec::with_capacity(d);
        for i in 0..d {
            let column: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            let (m, sd) = (r.mean()[i], r.var(i).sqrt());
            ks_dims.push(ks_statistic(&column, |x| normal_cdf((x - m) / sd)));
        }
        (Some(me), Some(ve), Some(ks_dims))
    } else {
        (None, None, None)
    };

    let (ess, log_z_is) = match log_weights {
        Some(lw) => {
            if lw.len() != samples.len() {
                return Err(Error::Metrics("one log weight per sample required".into()));
            }
            (Some(effective_sample_size(lw)), Some(log_mean_exp(lw)))
        }
        None => (None, None),
    };

    Ok(MetricsRecord {
        schema_version: MetricsRecord::SCHEMA_VERSION,
        n_samples: samples.len(),
        mean,
        variance,
        mean_error,
        variance_error,
        ks,
        ess,
        log_z_is,
        log_z_flow: None,
        loss_trace: None,
        wall_clock_seconds: None,
    })
}

/// (sum w)^2 / sum w^2 computed stably from log weights.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for lw in log_weights {
        let w = (lw - m).exp();
        s1 += w;
        s2 += w * w;
    }
    s1 * s1 / s2
}

/// log( mean(exp(lw)) ).
pub fn log_mean_exp(log_weights: &[f64]) -> f64 {
    logsumexp(log_weights) - (log_weights.len() as f64).ln()
}

/// Total variation distance between the histogram of scalar samples and a
/// reference bin-mass vector on the uniform bins of [lo, hi]. Sample mass
/// falling outside the range counts fully toward the distance.
pub fn histogram_tv(samples: &[f64], lo: f64, hi: f64, ref_masses: &[f64]) -> f64 {
    let bins = ref_masses.len();
    let mut counts = vec![0.0; bins];
    let mut outside = 0.0;
    let w = (hi - lo) / bins as f64;
    for &s in samples {
        if s < lo || s >= hi {
            outside += 1.0;
        } else {
            let b = (((s - lo) / w) as usize).min(bins - 1);
            counts[b] += 1.0;
        }
    }
    let n = samples.len() as f64;
    let mut tv = outside / n;
    for (c, r) in counts.iter().zip(ref_masses) {
        tv += (c / n - r).abs();
    }
    0.5 * tv
}

/// Sample skewness and excess kurtosis of a scalar column, with the standard
/// errors sqrt(6/n) and sqrt(24/n) under normality.
pub fn skewness_kurtosis(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = samples.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

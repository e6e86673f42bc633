//! Scalar special functions, quadrature rules and small dense linear algebra.
//!
//! Everything here is self-contained: the error function is computed from its
//! confluent series and a continued fraction, Gauss–Legendre nodes by Newton
//! iteration on the Legendre recurrence, and Cholesky factorizations by the
//! textbook algorithm (dimensions stay tiny throughout the crate).

pub const LN_2PI: f64 = 1.837877066409345483560659472811;
pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
use std::f64::consts::FRAC_2_SQRT_PI;

/// Error function, accurate to ~1e-15 over the real line.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x < 3.0 {
        // erf(x) = (2x/sqrt(pi)) e^{-x^2} * sum_n (2x^2)^n / (1*3*...*(2n+1))
        let xx = x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut n = 0u32;
        loop {
            n += 1;
            term *= 2.0 * xx / (2.0 * n as f64 + 1.0);
            sum += term;
            if term < 1e-18 * sum || n > 200 {
                break;
            }
        }
        FRAC_2_SQRT_PI * x * (-xx).exp() * sum
    } else {
        1.0 - erfc_large(x)
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < 3.0 {
        1.0 - erf(x)
    } else {
        erfc_large(x)
    }
}

// Continued fraction erfc(x) = e^{-x^2}/(x sqrt(pi)) / (1 + 1/(2x^2) / (1 + 2/(2x^2) / ...)),
// evaluated by the modified Lentz algorithm. Used for x >= 3.
fn erfc_large(x: f64) -> f64 {
    let tiny = 1e-300;
    let inv2xx = 1.0 / (2.0 * x * x);
    let mut f = tiny;
    let mut c = f;
    let mut d = 0.0;
    for k in 0..200 {
        let (a, b) = if k == 0 {
            (1.0, 1.0)
        } else {
            (k as f64 * inv2xx, 1.0)
        };
        d = b + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (x * std::f64::consts::PI.sqrt()) * f
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Log density of a scalar normal.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + var.ln() + z * z / var)
}

/// Log density of an isotropic normal N(mean, var * I) in d dimensions.
pub fn isotropic_normal_logpdf(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as f64;
    let mut ss = 0.0;
    for (xi, mi) in x.iter().zip(mean) {
        let z = xi - mi;
        ss += z * z;
    }
    -0.5 * (d * (LN_2PI + var.ln()) + ss / var)
}

/// Log density of a standard normal in d dimensions.
pub fn std_normal_logpdf(x: &[f64]) -> f64 {
    -0.5 * (x.len() as f64 * LN_2PI + sumsq(x))
}

/// Numerically stable log(sum(exp(v))).
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sumsq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Infinity norm.
pub fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Gauss–Legendre nodes and weights on [lo, hi].
///
/// Nodes are found by Newton iteration started from the Chebyshev guess; the
/// rule is exact for polynomials of degree 2n-1 and converges spectrally for
/// the smooth Gaussian-type integrands used in this crate.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence: (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 1..n {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    for i in 0..n {
        nodes[i] = mid + half * nodes[i];
        weights[i] *= half;
    }
    (nodes, weights)
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

/// CDF of the Kolmogorov distribution, P(sqrt(n) * D <= lambda) in the limit.
pub fn kolmogorov_cdf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (1.0 - 2.0 * s).clamp(0.0, 1.0)
}

/// Asymptotic critical value for the two-sided KS statistic at level `p`
/// (e.g. p = 0.99) with `n` samples.
pub fn ks_critical_value(p: f64, n: usize) -> f64 {
    let (mut lo, mut hi) = (1e-3, 4.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (n as f64).sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix
/// stored row-major. Returns `None` when the matrix is not positive definite.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    assert_eq!(a.len(), d * d);
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves A x = b given the lower Cholesky factor of A.
pub fn chol_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in (i + 1)..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    x
}

/// log det(A) from the lower Cholesky factor of A.
pub fn chol_logdet(l: &[f64], d: usize) -> f64 {
    (0..d).map(|i| l[i * d + i].ln()).sum::<f64>() * 2.0
}

/// y = L z for a lower-triangular L (used to sample correlated Gaussians).
pub fn lower_tri_mul(l: &[f64], d: usize, z: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[i * d + k] * z[k];
        }
        y[i] = s;
    }
    y
}

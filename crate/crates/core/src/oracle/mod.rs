//! Exact finite-state oracle: discretized OU kernels, Sinkhorn on grids and
//! the iterative-proportional-fitting identities, used as the brute-force
//! referee for the learned bridge samplers.

mod ipf;
mod sinkhorn;

pub use ipf::{grid_ipf_gs_iterates, grid_ipf_path_marginals, verify_h_identity, PathMarginals};
pub use sinkhorn::{
    sinkhorn_static_sb, sinkhorn_trace, transport_cost, SinkhornOptions, SinkhornResult,
};

use crate::math::logsumexp;
use crate::sde::OuTransition;
use crate::{Error, Result};

/// A finite set of states on a uniform 1-d or 2-d lattice.
#[derive(Debug, Clone)]
pub struct Lattice {
    points: Vec<Vec<f64>>,
    dim: usize,
    spacing: f64,
}

impl Lattice {
    /// Uniform 1-d lattice of n cell centers on [lo, hi].
    pub fn line(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::Domain("lattice needs n >= 2 and hi > lo".into()));
        }
        let spacing = (hi - lo) / n as f64;
        let points = (0..n)
            .map(|i| vec![lo + (i as f64 + 0.5) * spacing])
            .collect();
        Ok(Self {
            points,
            dim: 1,
            spacing,
        })
    }

    /// Uniform 2-d lattice of n x n cell centers on [lo, hi]^2.
    pub fn square(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::Domain("lattice needs n >= 2 and hi > lo".into()));
        }
        let spacing = (hi - lo) / n as f64;
        let mut points = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                points.push(vec![
                    lo + (i as f64 + 0.5) * spacing,
                    lo + (j as f64 + 0.5) * spacing,
                ]);
            }
        }
        Ok(Self {
            points,
            dim: 2,
            spacing,
        })
    }

    /// Default 1-d oracle lattice: 400 points on [-8, 8].
    pub fn default_line() -> Self {
        Self::line(400, -8.0, 8.0).unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Coordinates of the 1-d lattice (panics on 2-d lattices).
    pub fn coords_1d(&self) -> Vec<f64> {
        assert_eq!(self.dim, 1);
        self.points.iter().map(|p| p[0]).collect()
    }

    /// Lower edge of the 1-d lattice cells.
    pub fn lo(&self) -> f64 {
        self.points[0][0] - 0.5 * self.spacing
    }

    pub fn hi(&self) -> f64 {
        self.points.last().unwrap()[0] + 0.5 * self.spacing
    }
}

/// A probability vector over the lattice states.
#[derive(Debug, Clone)]
pub struct GridMeasure {
    probs: Vec<f64>,
}

impl GridMeasure {
    /// Normalizes a nonnegative mass vector; errors on negative or zero mass.
    pub fn new(mut mass: Vec<f64>) -> Result<Self> {
        if mass.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Domain("measure entries must be finite and >= 0".into()));
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("measure has no mass".into()));
        }
        for p in mass.iter_mut() {
            *p /= total;
        }
        Ok(Self { probs: mass })
    }

    /// Discretizes a log-density onto the lattice cells.
    pub fn from_log_density(lattice: &Lattice, log_density: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let logs: Vec<f64> = lattice.points.iter().map(|p| log_density(p)).collect();
        let total = logsumexp(&logs);
        Self::new(logs.iter().map(|l| (l - total).exp()).collect())
    }

    /// The discretized standard normal on the lattice.
    pub fn standard_normal(lattice: &Lattice) -> Result<Self> {
        Self::from_log_density(lattice, crate::math::std_normal_logpdf)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Sums adjacent blocks of `factor` cells (1-d), e.g. to compare a
    /// 400-point lattice against a 200-bin histogram.
    pub fn coarsen(&self, factor: usize) -> GridMeasure {
        assert!(factor >= 1 && self.probs.len() % factor == 0);
        let probs = self
            .probs
            .chunks(factor)
            .map(|c| c.iter().sum())
            .collect();
        GridMeasure { probs }
    }

    pub fn mean_1d(&self, lattice: &Lattice) -> f64 {
        self.probs
            .iter()
            .zip(&lattice.points)
            .map(|(p, x)| p * x[0])
            .sum()
    }

    pub fn variance_1d(&self, lattice: &Lattice) -> f64 {
        let m = self.mean_1d(lattice);
        self.probs
            .iter()
            .zip(&lattice.points)
            .map(|(p, x)| p * (x[0] - m) * (x[0] - m))
            .sum()
    }
}

/// Where a kernel came from; OU kernels remember their elapsed time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelProvenance {
    OuElapsed(f64),
    Composed,
    Custom,
}

/// A row-stochastic m x m transition matrix over the lattice, kept in both
/// linear and log form.
#[derive(Debug, Clone)]
pub struct GridKernel {
    m: usize,
    probs: Vec<f64>,
    logs: Vec<f64>,
    pub provenance: KernelProvenance,
}

impl GridKernel {
    /// Builds from row-wise log-masses (normalized internally).
    pub fn from_log_rows(m: usize, mut logs: Vec<f64>, provenance: KernelProvenance) -> Result<Self> {
        if logs.len() != m * m {
            return Err(Error::Domain("kernel must be m x m".into()));
        }
        let mut probs = vec![0.0; m * m];
        for i in 0..m {
            let row = &mut logs[i * m..(i + 1) * m];
            let total = logsumexp(row);
            if !total.is_finite() {
                return Err(Error::Domain(format!("kernel row {i} has no mass")));
            }
            for (l, p) in row.iter_mut().zip(&mut probs[i * m..(i + 1) * m]) {
                *l -= total;
                *p = l.exp();
            }
        }
        Ok(Self {
            m,
            probs,
            logs,
            provenance,
        })
    }

    /// Builds from nonnegative row masses.
    pub fn from_rows(m: usize, rows: Vec<f64>, provenance: KernelProvenance) -> Result<Self> {
        if rows.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Domain("kernel entries must be finite and >= 0".into()));
        }
        let logs = rows.iter().map(|p| p.ln()).collect();
        Self::from_log_rows(m, logs, provenance)
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logs(&self) -> &[f64] {
        &self.logs
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.m + j]
    }

    /// Matrix product self * other (chaining transitions).
    pub fn compose(&self, other: &GridKernel) -> Result<GridKernel> {
        if self.m != other.m {
            return Err(Error::Domain("kernel sizes differ".into()));
        }
        let m = self.m;
        let mut out = vec![0.0; m * m];
        // ikj loop order keeps the inner traversal contiguous.
        for i in 0..m {
            for k in 0..m {
                let a = self.probs[i * m + k];
                if a == 0.0 {
                    continue;
                }
                let row_b = &other.probs[k * m..(k + 1) * m];
                let row_o = &mut out[i * m..(i + 1) * m];
                for (o, b) in row_o.iter_mut().zip(row_b) {
                    *o += a * b;
                }
            }
        }
        GridKernel::from_rows(m, out, KernelProvenance::Composed)
    }

    /// Pushes a measure through the kernel: (nu K)_j = sum_i nu_i K_ij.
    pub fn propagate(&self, nu: &GridMeasure) -> Result<GridMeasure> {
        if nu.len() != self.m {
            return Err(Error::Domain("measure size does not match kernel".into()));
        }
        let m = self.m;
        let mut out = vec![0.0; m];
        for i in 0..m {
            let p = nu.probs[i];
            if p == 0.0 {
                continue;
            }
            let row = &self.probs[i * m..(i + 1) * m];
            for (o, k) in out.iter_mut().zip(row) {
                *o += p * k;
            }
        }
        GridMeasure::new(out)
    }
}

/// Discretizes the OU transition kernel over elapsed time t onto the lattice:
/// rows proportional to N(x_j; alpha(t) x_i, v(t) I), row-normalized.
pub fn discretize_ou_kernel(lattice: &Lattice, t: f64) -> Result<GridKernel> {
    let tr = OuTransition::new(t)?;
    let m = lattice.len();
    let mut logs = vec![0.0; m * m];
    for i in 0..m {
        let xi = lattice.point(i);
        for j in 0..m {
            let xj = lattice.point(j);
            let mut d2 = 0.0;
            for (a, b) in xi.iter().zip(xj) {
                let z = b - tr.alpha * a;
                d2 += z * z;
            }
            logs[i * m + j] = -0.5 * d2 / tr.var;
        }
    }
    GridKernel::from_log_rows(m, logs, KernelProvenance::OuElapsed(t))
}

/// KL divergence sum p ln(p/q) between two mass vectors (infinite when p
/// charges a q-null entry).
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (a, b) in p.iter().zip(q) {
        if *a > 0.0 {
            if *b <= 0.0 {
                return f64::INFINITY;
            }
            kl += a * (a / b).ln();
        }
    }
    kl
}

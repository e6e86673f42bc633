//! Log-domain Sinkhorn iteration for the static bridge on a grid.
//!
//! Given a reference kernel K and marginals (nu0, nuT), alternating row and
//! column scalings converge to the coupling pi_ij = exp(a_i + log K_ij + b_j)
//! minimizing KL from the reference joint nu0 (x) K subject to both marginal
//! constraints.

use super::{GridKernel, GridMeasure, Lattice};
use crate::math::logsumexp;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SinkhornOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// The coupling matrix (m x m, sums to 1).
    pub coupling: Vec<f64>,
    /// Log-domain row/column potentials relative to the raw kernel.
    pub log_potentials: (Vec<f64>, Vec<f64>),
    pub iterations: usize,
    /// Final worst marginal residual.
    pub marginal_gap: f64,
}

fn marginal_gap(coupling: &[f64], m: usize, nu0: &GridMeasure, nu_t: &GridMeasure) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m {
        let s: f64 = coupling[i * m..(i + 1) * m].iter().sum();
        worst = worst.max((s - nu0.probs()[i]).abs());
    }
    for j in 0..m {
        let s: f64 = (0..m).map(|i| coupling[i * m + j]).sum();
        worst = worst.max((s - nu_t.probs()[j]).abs());
    }
    worst
}

fn build_coupling(logs: &[f64], m: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut coupling = vec![0.0; m * m];
    for i in 0..m {
        if a[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in 0..m {
            let l = a[i] + logs[i * m + j] + b[j];
            coupling[i * m + j] = l.exp();
        }
    }
    coupling
}

fn sweep(logs: &[f64], m: usize, nu0: &GridMeasure, nu_t: &GridMeasure, a: &mut [f64], b: &mut [f64]) {
    let mut buf = vec![0.0; m];
    // Row scaling: rows sum to nu0 exactly afterwards.
    for i in 0..m {
        for j in 0..m {
            buf[j] = logs[i * m + j] + b[j];
        }
        let lse = logsumexp(&buf);
        a[i] = if nu0.probs()[i] > 0.0 {
            nu0.probs()[i].ln() - lse
        } else {
            f64::NEG_INFINITY
        };
    }
    // Column scaling: columns sum to nuT exactly afterwards.
    for j in 0..m {
        for i in 0..m {
            buf[i] = logs[i * m + j] + a[i];
        }
        let lse = logsumexp(&buf);
        b[j] = if nu_t.probs()[j] > 0.0 {
            nu_t.probs()[j].ln() - lse
        } else {
            f64::NEG_INFINITY
        };
    }
}

/// Alternating KL projections onto the marginal constraints, in log domain.
/// Errors with the final gap if the tolerance is not reached.
pub fn sinkhorn_static_sb(
    kernel: &GridKernel,
    nu0: &GridMeasure,
    nu_t: &GridMeasure,
    opts: SinkhornOptions,
) -> Result<SinkhornResult> {
    let m = kernel.size();
    if nu0.len() != m || nu_t.len() != m {
        return Err(Error::Domain("marginal sizes must match the kernel".into()));
    }
    let logs = kernel.logs();
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    for it in 1..=opts.max_iters {
        sweep(logs, m, nu0, nu_t, &mut a, &mut b);
        let coupling = build_coupling(logs, m, &a, &b);
        let gap = marginal_gap(&coupling, m, nu0, nu_t);
        if gap < opts.tol {
            return Ok(SinkhornResult {
                coupling,
                log_potentials: (a, b),
                iterations: it,
                marginal_gap: gap,
            });
        }
        if it == opts.max_iters {
            return Err(Error::SinkhornDiverged {
                iterations: it,
                gap,
            });
        }
    }
    unreachable!("loop always returns");
}

/// Runs a fixed number of full sweeps, returning the coupling after each one
/// (used to study the convergence of the iterates).
pub fn sinkhorn_trace(
    kernel: &GridKernel,
    nu0: &GridMeasure,
    nu_t: &GridMeasure,
    sweeps: usize,
) -> Vec<Vec<f64>> {
    let m = kernel.size();
    let logs = kernel.logs();
    let mut a = vec![0.0; m];
    let mut b = vec![0.0; m];
    let mut out = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        sweep(logs, m, nu0, nu_t, &mut a, &mut b);
        out.push(build_coupling(logs, m, &a, &b));
    }
    out
}

/// Expected squared transport distance E ||X_T - X_0||^2 under a coupling.
pub fn transport_cost(lattice: &Lattice, coupling: &[f64]) -> f64 {
    let m = lattice.len();
    let mut cost = 0.0;
    for i in 0..m {
        for j in 0..m {
            let p = coupling[i * m + j];
            if p == 0.0 {
                continue;
            }
            let mut d2 = 0.0;
            for (ai, bj) in lattice.point(i).iter().zip(lattice.point(j)) {
                let z = ai - bj;
                d2 += z * z;
            }
            cost += p * d2;
        }
    }
    cost
}

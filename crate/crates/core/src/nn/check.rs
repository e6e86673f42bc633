//! Finite-difference verification of reverse-mode gradients.

use crate::{Error, Prng, Result};

/// Compares an analytic gradient against central finite differences of
/// `loss_fn` on `n_probe` random coordinates. The loss closure must be a pure
/// function of the parameters (all randomness frozen by the caller).
///
/// Returns the largest relative error seen; errors above `rel_tol` fail.
pub fn finite_difference_check(
    loss_fn: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    n_probe: usize,
    rel_tol: f64,
    rng: &mut Prng,
) -> Result<f64> {
    assert_eq!(params.len(), analytic.len());
    let gmax = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    let mut buf = params.to_vec();
    for _ in 0..n_probe {
        let i = rng.uniform_index(params.len());
        let h = 1e-5 * (1.0 + params[i].abs());
        buf[i] = params[i] + h;
        let hi = loss_fn(&buf);
        buf[i] = params[i] - h;
        let lo = loss_fn(&buf);
        buf[i] = params[i];
        let fd = (hi - lo) / (2.0 * h);
        // Coordinates with negligible gradient are compared on the scale of
        // the dominant gradient entry rather than their own magnitude.
        let denom = analytic[i].abs().max(1e-6 * gmax).max(1e-12);
        let rel = (fd - analytic[i]).abs() / denom;
        if rel > worst {
            worst = rel;
        }
        if rel > rel_tol {
            return Err(Error::Domain(format!(
                "gradient check failed at coordinate {i}: finite difference {fd:.6e} vs analytic {:.6e} (relative error {rel:.3e})",
                analytic[i]
            )));
        }
    }
    Ok(worst)
}

//! Time grids, the Ornstein–Uhlenbeck reference process in closed form,
//! Euler–Maruyama simulation and the probability-flow ODE.

mod flow;
mod grid;
mod ou;
mod sim;

pub use flow::{divergence_central, fd_step, probability_flow, probability_flow_with_divergence, Divergence};
pub use grid::{Direction, Path, TimeGrid};
pub use ou::{ou_gaussian_marginal, ou_moments, ou_transition_score, OuTransition};
pub use sim::{euler_maruyama, euler_maruyama_directed, simulate_controlled_reference};

/// A drift field (t, x[, y]) -> R^d. The optional `y` is a conditioning
/// vector held constant along a trajectory; unconditional drifts ignore it.
pub trait Drift {
    fn eval(&self, t: f64, x: &[f64], y: Option<&[f64]>) -> Vec<f64>;
}

/// The stationary reference drift -x/2 of the noising process.
#[derive(Debug, Clone, Copy)]
pub struct OuDrift;

impl Drift for OuDrift {
    fn eval(&self, _t: f64, x: &[f64], _y: Option<&[f64]>) -> Vec<f64> {
        x.iter().map(|v| -0.5 * v).collect()
    }
}

/// Wraps an unconditional closure as a drift field.
pub struct FnDrift<F>(pub F);

impl<F: Fn(f64, &[f64]) -> Vec<f64>> Drift for FnDrift<F> {
    fn eval(&self, t: f64, x: &[f64], _y: Option<&[f64]>) -> Vec<f64> {
        (self.0)(t, x)
    }
}

/// Presents a drift indexed by forward time on the reversed clock:
/// `eval(s, x) = inner.eval(T - s, x)`.
pub struct TimeReversed<'a, D: ?Sized> {
    pub horizon: f64,
    pub inner: &'a D,
}

impl<D: Drift + ?Sized> Drift for TimeReversed<'_, D> {
    fn eval(&self, t: f64, x: &[f64], y: Option<&[f64]>) -> Vec<f64> {
        self.inner.eval(self.horizon - t, x, y)
    }
}

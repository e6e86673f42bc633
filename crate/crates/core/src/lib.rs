//! Diffusion-based samplers for Bayesian posteriors and unnormalized densities.
//!
//! The crate implements four samplers built on the same Ornstein–Uhlenbeck
//! noising process:
//!
//! * [`ddps`] — denoising diffusion posterior sampling: amortized conditional
//!   score estimation by denoising score matching, then time-reversal.
//! * [`dsb_ps`] — diffusion Schrödinger bridge posterior sampling: iterative
//!   proportional fitting with mean-matching drift regression, for exact
//!   transport at short diffusion horizons.
//! * [`ddgs`] — denoising diffusion general sampling from an unnormalized
//!   density: a Doob h-transform drift correction trained by reverse-KL
//!   minimization, with importance-sampling and probability-flow estimators
//!   of the normalizing constant.
//! * [`dsb_gs`] — the Schrödinger bridge extension of general sampling,
//!   alternating score estimation and h-transform fits.
//!
//! Everything runs at desk scale (d ≤ 10) on plain `f64` vectors. Training
//! uses the small reverse-mode engine in [`nn`], and correctness is checked
//! against the analytic Gaussian oracles in [`models`] and the exact
//! finite-state oracle in [`oracle`].

pub mod ddgs;
pub mod ddps;
pub mod dsb_gs;
pub mod dsb_ps;
pub mod error;
pub mod math;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod sde;

pub use error::Error;
pub use rng::Prng;
pub use sde::{Direction, Drift, Path, TimeGrid};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

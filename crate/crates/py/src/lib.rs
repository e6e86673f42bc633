//! Python bindings: the target zoo, OU analytics and the four samplers,
//! exposed with plain-list interfaces so the module needs nothing beyond the
//! standard library on the Python side.

use diffbridge::models::{ConjugateLinearGaussian, GaussianParams, JointModel, TargetDensity};
use diffbridge::nn::AdamConfig;
use diffbridge::sde::TimeGrid;
use diffbridge::{ddgs, ddps, dsb_gs, dsb_ps, Prng};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// (alpha, v) of the OU transition over elapsed time t.
#[pyfunction]
fn ou_moments(t: f64) -> PyResult<(f64, f64)> {
    diffbridge::sde::ou_moments(t).map_err(err)
}

/// Transition score (alpha(t) x0 - xt) / v(t).
#[pyfunction]
fn ou_transition_score(x0: Vec<f64>, xt: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    diffbridge::sde::ou_transition_score(&x0, &xt, t).map_err(err)
}

/// An unnormalized target density with its gradient.
#[pyclass]
struct Target {
    inner: TargetDensity,
}

#[pymethods]
impl Target {
    #[staticmethod]
    fn standard_normal(dim: usize) -> Target {
        Target {
            inner: TargetDensity::standard_normal(dim),
        }
    }

    /// Isotropic Gaussian scaled by a positive constant (log Z = log scale).
    #[staticmethod]
    #[pyo3(signature = (mean, var, scale = 1.0))]
    fn gaussian(mean: Vec<f64>, var: f64, scale: f64) -> PyResult<Target> {
        let params = GaussianParams::isotropic(mean, var).map_err(err)?;
        Ok(Target {
            inner: TargetDensity::gaussian(params, scale).map_err(err)?,
        })
    }

    /// Isotropic Gaussian mixture with the given mode centers.
    #[staticmethod]
    #[pyo3(signature = (modes, var, weights = None))]
    fn mixture(modes: Vec<Vec<f64>>, var: f64, weights: Option<Vec<f64>>) -> PyResult<Target> {
        let weights =
            weights.unwrap_or_else(|| vec![1.0 / modes.len().max(1) as f64; modes.len()]);
        let comps = modes
            .into_iter()
            .map(|m| GaussianParams::isotropic(m, var))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        Ok(Target {
            inner: TargetDensity::gaussian_mixture(weights, comps).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (scale = 3.0))]
    fn funnel(scale: f64) -> PyResult<Target> {
        Ok(Target {
            inner: TargetDensity::funnel(scale).map_err(err)?,
        })
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn known_log_z(&self) -> Option<f64> {
        self.inner.known_log_z()
    }

    fn log_gamma(&self, x: Vec<f64>) -> f64 {
        self.inner.log_gamma(&x)
    }

    fn grad_log_gamma(&self, x: Vec<f64>) -> Vec<f64> {
        self.inner.grad_log_gamma(&x)
    }
}

fn grid(horizon: f64, steps: usize) -> PyResult<TimeGrid> {
    TimeGrid::uniform(horizon, steps).map_err(err)
}

/// Trained general sampler (reverse-KL h-transform correction).
#[pyclass]
struct GeneralSampler {
    inner: ddgs::HTransformSampler,
}

#[pymethods]
impl GeneralSampler {
    /// Trains the drift correction for the target.
    #[staticmethod]
    #[pyo3(signature = (target, seed, horizon = 5.0, steps = 64, iterations = 2000,
                        batch_size = 128, hidden = None, learning_rate = 1e-3))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        target: &Target,
        seed: u64,
        horizon: f64,
        steps: usize,
        iterations: usize,
        batch_size: usize,
        hidden: Option<Vec<usize>>,
        learning_rate: f64,
    ) -> PyResult<GeneralSampler> {
        let cfg = ddgs::DdgsConfig {
            grid: grid(horizon, steps)?,
            batch_size,
            iterations,
            adam: AdamConfig::with_lr(learning_rate),
            hidden: hidden.unwrap_or_else(|| vec![64, 64]),
        };
        let mut rng = Prng::seed_from(seed);
        Ok(GeneralSampler {
            inner: ddgs::train_ddgs(&target.inner, &cfg, &mut rng).map_err(err)?,
        })
    }

    /// Draws samples with log importance weights (mean of exp(weights)
    /// estimates the normalizer Z without discretization bias).
    fn sample(&self, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut rng = Prng::seed_from(seed);
        ddgs::sample_ddgs(&self.inner, n, &mut rng).map_err(err)
    }

    fn loss_trace(&self) -> Vec<f64> {
        self.inner.loss_trace().to_vec()
    }
}

/// Trained amortized posterior sampler for the conjugate linear-Gaussian
/// model x ~ N(0, prior_var I), y | x ~ N(x, obs_var I).
#[pyclass]
struct PosteriorSampler {
    inner: ddps::TrainedPosteriorSampler,
}

#[pymethods]
impl PosteriorSampler {
    #[staticmethod]
    #[pyo3(signature = (prior_var, obs_var, dim, seed, horizon = 5.0, steps = 64,
                        iterations = 4000, batch_size = 128, hidden = None))]
    #[allow(clippy::too_many_arguments)]
    fn train_conjugate(
        prior_var: f64,
        obs_var: f64,
        dim: usize,
        seed: u64,
        horizon: f64,
        steps: usize,
        iterations: usize,
        batch_size: usize,
        hidden: Option<Vec<usize>>,
    ) -> PyResult<PosteriorSampler> {
        let model = ConjugateLinearGaussian::new(prior_var, obs_var, dim).map_err(err)?;
        let g = grid(horizon, steps)?;
        let cfg = ddps::DdpsConfig {
            t_min: 1e-3 * g.horizon(),
            grid: g,
            batch_size,
            iterations,
            adam: AdamConfig::default(),
            hidden: hidden.unwrap_or_else(|| vec![64, 64]),
        };
        let mut rng = Prng::seed_from(seed);
        Ok(PosteriorSampler {
            inner: ddps::train_ddps(&model, &cfg, &mut rng).map_err(err)?,
        })
    }

    fn sample(&self, y: Vec<f64>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let mut rng = Prng::seed_from(seed);
        ddps::sample_posterior(&self.inner, &y, n, &mut rng).map_err(err)
    }

    fn loss_trace(&self) -> Vec<f64> {
        self.inner.loss_trace().to_vec()
    }
}

/// Bridge posterior sampler (iterative proportional fitting at short T).
#[pyclass]
struct BridgePosteriorSampler {
    inner: dsb_ps::IpfState,
}

#[pymethods]
impl BridgePosteriorSampler {
    #[staticmethod]
    #[pyo3(signature = (prior_var, obs_var, dim, seed, horizon = 1.0, steps = 32,
                        ipf_rounds = 5, inner_iterations = 2000, trajectory_batch = 16,
                        hidden = None))]
    #[allow(clippy::too_many_arguments)]
    fn train_conjugate(
        prior_var: f64,
        obs_var: f64,
        dim: usize,
        seed: u64,
        horizon: f64,
        steps: usize,
        ipf_rounds: usize,
        inner_iterations: usize,
        trajectory_batch: usize,
        hidden: Option<Vec<usize>>,
    ) -> PyResult<BridgePosteriorSampler> {
        let model = ConjugateLinearGaussian::new(prior_var, obs_var, dim).map_err(err)?;
        let cfg = dsb_ps::DsbConfig {
            grid: grid(horizon, steps)?,
            ipf_rounds,
            inner_iterations,
            batch_size: trajectory_batch,
            adam: AdamConfig::default(),
            hidden: hidden.unwrap_or_else(|| vec![64, 64]),
            warm_start: true,
            eval_y: None,
            diag_samples: 0,
        };
        let mut rng = Prng::seed_from(seed);
        Ok(BridgePosteriorSampler {
            inner: dsb_ps::run_dsb_ps(&model, &cfg, &mut rng).map_err(err)?,
        })
    }

    fn sample(&self, y: Vec<f64>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let mut rng = Prng::seed_from(seed);
        dsb_ps::sample_dsb_posterior(&self.inner, &y, n, &mut rng).map_err(err)
    }
}

/// Bridge general sampler (score fits + h-transform corrections).
#[pyclass]
struct BridgeGeneralSampler {
    inner: dsb_gs::GsIpfState,
}

#[pymethods]
impl BridgeGeneralSampler {
    #[staticmethod]
    #[pyo3(signature = (target, seed, horizon = 1.0, steps = 32, ipf_rounds = 3,
                        h_iterations = 2000, refine_h_iterations = 600,
                        score_iterations = 1200, batch_size = 128, hidden = None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        target: &Target,
        seed: u64,
        horizon: f64,
        steps: usize,
        ipf_rounds: usize,
        h_iterations: usize,
        refine_h_iterations: usize,
        score_iterations: usize,
        batch_size: usize,
        hidden: Option<Vec<usize>>,
    ) -> PyResult<BridgeGeneralSampler> {
        let cfg = dsb_gs::DsbGsConfig {
            grid: grid(horizon, steps)?,
            ipf_rounds,
            h_iterations,
            refine_h_iterations,
            score_iterations,
            batch_size,
            score_batch: 16,
            flow_steps: 16,
            distill_iterations: 4000,
            distill_tolerance: 1e-3,
            adam: AdamConfig::default(),
            hidden: hidden.unwrap_or_else(|| vec![64, 64]),
        };
        let mut rng = Prng::seed_from(seed);
        Ok(BridgeGeneralSampler {
            inner: dsb_gs::run_dsb_gs(&target.inner, &cfg, &mut rng).map_err(err)?,
        })
    }

    fn sample(&self, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut rng = Prng::seed_from(seed);
        dsb_gs::sample_dsb_gs(&self.inner, n, &mut rng).map_err(err)
    }

    fn rounds_completed(&self) -> usize {
        self.inner.rounds_completed()
    }
}

/// Exact posterior moments of the conjugate linear-Gaussian model, for
/// checking the samplers from Python.
#[pyfunction]
fn conjugate_posterior(prior_var: f64, obs_var: f64, y: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
    let model = ConjugateLinearGaussian::new(prior_var, obs_var, y.len()).map_err(err)?;
    let post = model.analytic_posterior(&y).ok_or_else(|| err("no posterior"))?;
    Ok((post.mean().to_vec(), post.var(0)))
}

#[pymodule]
fn diffbridge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ou_moments, m)?)?;
    m.add_function(wrap_pyfunction!(ou_transition_score, m)?)?;
    m.add_function(wrap_pyfunction!(conjugate_posterior, m)?)?;
    m.add_class::<Target>()?;
    m.add_class::<GeneralSampler>()?;
    m.add_class::<PosteriorSampler>()?;
    m.add_class::<BridgePosteriorSampler>()?;
    m.add_class::<BridgeGeneralSampler>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

//! Discretization of the diffusion interval and simulated trajectories.

use crate::{Error, Result};

/// A strictly increasing partition 0 = t_0 < ... < t_K = T of the
/// diffusion interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `steps` equal steps over [0, horizon].
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Domain("grid needs at least one step".into()));
        }
        let times = (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect();
        Ok(Self { times })
    }

    /// Builds a grid from explicit times; must start at 0 and strictly increase.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Domain("grid needs at least two time points".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::Domain(format!("grid must start at 0, got {}", times[0])));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain(format!(
                    "grid times must strictly increase ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// Number of steps K (one less than the number of time points).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Step size gamma_{k+1} = t_{k+1} - t_k for k in 0..K.
    pub fn step_size(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }
}

/// Orientation of a simulated trajectory relative to the noising process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// A trajectory of d-dimensional states over a time grid, optionally with the
/// standard-normal increments that generated it. Immutable once built.
#[derive(Debug, Clone)]
pub struct Path {
    grid: TimeGrid,
    states: Vec<Vec<f64>>,
    direction: Direction,
    noises: Option<Vec<Vec<f64>>>,
}

impl Path {
    pub fn new(
        grid: TimeGrid,
        states: Vec<Vec<f64>>,
        direction: Direction,
        noises: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if states.len() != grid.steps() + 1 {
            return Err(Error::Domain(format!(
                "path needs {} states for a {}-step grid, got {}",
                grid.steps() + 1,
                grid.steps(),
                states.len()
            )));
        }
        let d = states[0].len();
        if states.iter().any(|s| s.len() != d) {
            return Err(Error::Domain("all path states must share one dimension".into()));
        }
        if let Some(n) = &noises {
            if n.len() != grid.steps() || n.iter().any(|z| z.len() != d) {
                return Err(Error::Domain("noise record shape must match the grid".into()));
            }
        }
        Ok(Self {
            grid,
            states,
            direction,
            noises,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k]
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn noises(&self) -> Option<&[Vec<f64>]> {
        self.noises.as_deref()
    }
}

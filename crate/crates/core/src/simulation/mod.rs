//! Fixed-step time-domain verification of synthesized filters.

mod certificate;
mod dynamics;
mod export;
mod plant;
mod signal;

pub use certificate::{energy_certificate, lyapunov_decay_check, monte_carlo, EnergyCertificate, LyapunovCheck};
pub use dynamics::{
    cosimulate, integrate_error_dynamics, integrate_filter, ErrorModel, ErrorTrajectory, FilterRun, Trajectory,
};
pub use export::{write_trajectory_csv, CsvFooter};
pub use plant::{simulate_rolling_disc, DescriptorSimulator, PlantOutput, PlantTrajectory};
pub use signal::{disturbance_generator, FnSignal, HeldSignal, Signal, ZeroSignal};

use crate::error::SimulationError;
use crate::matrix::Vector;

/// Uniform time grid `t0, t0 + h, ..., t0 + steps * h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub t0: f64,
    pub h: f64,
    pub steps: usize,
}

impl Grid {
    /// `t_final - t0` must be a whole number of steps (to 1e-9 relative).
    pub fn new(t0: f64, t_final: f64, h: f64) -> Result<Self, SimulationError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(SimulationError::Grid(format!("step must be positive, got {h}")));
        }
        if !t0.is_finite() || !t_final.is_finite() || t_final <= t0 {
            return Err(SimulationError::Grid(format!("empty time span [{t0}, {t_final}]")));
        }
        let span = t_final - t0;
        let steps = (span / h).round();
        if (steps * h - span).abs() > 1e-9 * span.max(1.0) {
            return Err(SimulationError::Grid(format!(
                "span {span} is not a multiple of the step {h}"
            )));
        }
        Ok(Self {
            t0,
            h,
            steps: steps as usize,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.steps)
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }

    /// Same span with the step halved.
    pub fn refined(&self) -> Self {
        Self {
            h: self.h * 0.5,
            steps: self.steps * 2,
            ..*self
        }
    }
}

/// Classical RK4 step for `y' = f(k, t, y)`; `k` is the step index so that
/// held signals keep their step-`k` value through all four stages.
pub(crate) fn rk4_step<F>(f: &mut F, k: usize, t: f64, h: f64, y: &Vector) -> Result<(Vector, Vector), SimulationError>
where
    F: FnMut(usize, f64, &Vector) -> Result<Vector, SimulationError>,
{
    let k1 = f(k, t, y)?;
    let k2 = f(k, t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
    let k3 = f(k, t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
    let k4 = f(k, t + h, &(y + &k3 * h))?;
    let next = y + (&k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SimulationError::NonFinite { t: t + h });
    }
    Ok((next, k1))
}

/// Runs RK4 over the whole grid and returns the state at every grid point.
pub(crate) fn rk4<F>(mut f: F, grid: &Grid, y0: &Vector) -> Result<Vec<Vector>, SimulationError>
where
    F: FnMut(usize, f64, &Vector) -> Result<Vector, SimulationError>,
{
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0.clone());
    for k in 0..grid.steps {
        let (next, _) = rk4_step(&mut f, k, grid.time(k), grid.h, &out[k])?;
        out.push(next);
    }
    Ok(out)
}

pub(crate) fn ensure_finite_derivative(d: Vector, t: f64) -> Result<Vector, SimulationError> {
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(SimulationError::DomainExit { t })
    }
}

/// Composite trapezoid of `f(k)` over the grid.
pub fn trapezoid(grid: &Grid, f: impl Fn(usize) -> f64) -> f64 {
    let n = grid.steps;
    let inner: f64 = (1..n).map(&f).sum();
    grid.h * (0.5 * (f(0) + f(n)) + inner)
}

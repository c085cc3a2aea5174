use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{trapezoid, ErrorTrajectory, Grid};
use crate::error::SimulationError;
use crate::matrix::{Mat, Vector};

/// Slack allowed on the energy inequality.
pub const ENERGY_SLACK: f64 = 1e-9;

/// `int e^T e <= gamma^2 (beta + int v^T v)` evaluated by the trapezoid rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCertificate {
    pub gamma: f64,
    pub beta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

pub fn energy_certificate(grid: &Grid, e: &[Vector], v: &[Vector], gamma: f64, beta: f64) -> EnergyCertificate {
    let lhs = trapezoid(grid, |k| e[k].norm_squared());
    let rhs = gamma * gamma * (beta + trapezoid(grid, |k| v[k].norm_squared()));
    EnergyCertificate {
        gamma,
        beta,
        lhs,
        rhs,
        satisfied: lhs <= rhs + ENERGY_SLACK,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCheck {
    /// Largest `dV/dt - (gamma^2 v^T v - e^T e)` over the steps.
    pub max_violation: f64,
    pub max_v: f64,
    /// `1e-3 (1 + max V)`
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks `dV/dt <= gamma^2 v^T v - e^T e` for `V = e1^T Q e1` step by step.
///
/// On step `k` the disturbance is held, so the forward difference of `V` is
/// compared with the step average of the right-hand side, both ends of the
/// step using `v_k`.
pub fn lyapunov_decay_check(traj: &ErrorTrajectory, q: &Mat, gamma: f64) -> Result<LyapunovCheck, SimulationError> {
    let p = traj.h_tilde.nrows();
    if q.shape() != (p, p) {
        return Err(SimulationError::Length {
            what: "Q entries",
            expected: p * p,
            got: q.nrows() * q.ncols(),
        });
    }
    let grid = &traj.grid;
    let lyap = |e1: &Vector| (e1.transpose() * q * e1)[(0, 0)];
    let values: Vec<f64> = traj.e1.iter().map(lyap).collect();
    let mut max_violation = f64::NEG_INFINITY;
    for k in 0..grid.steps {
        let vk = &traj.v[k];
        let out = |e1: &Vector| (e1 - &traj.h_tilde * vk).norm_squared();
        let supply = gamma * gamma * vk.norm_squared() - 0.5 * (out(&traj.e1[k]) + out(&traj.e1[k + 1]));
        let dv = (values[k + 1] - values[k]) / grid.h;
        max_violation = max_violation.max(dv - supply);
    }
    if grid.steps == 0 {
        max_violation = 0.0;
    }
    let max_v = values.iter().copied().fold(0.0, |a: f64, b| a.max(b.abs()));
    let tolerance = 1e-3 * (1.0 + max_v);
    Ok(LyapunovCheck {
        max_violation,
        max_v,
        tolerance,
        passed: max_violation <= tolerance,
    })
}

/// Runs `f` once per seed on the rayon pool; results keep the seed order.
pub fn monte_carlo<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>, SimulationError>
where
    T: Send,
    F: Fn(u64) -> Result<T, SimulationError> + Sync,
{
    seeds.par_iter().map(|&s| f(s)).collect()
}

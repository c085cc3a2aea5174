use nalgebra::LU;

use super::{ensure_finite_derivative, rk4_step, Grid, Signal};
use crate::error::SimulationError;
use crate::matrix::{default_rel_tol, svd_decompose, Mat, Vector};
use crate::system::{DescriptorSystem, RollingDiscParams};

/// Tolerance on `|W x0|` for an attached linear constraint `W x = 0`.
pub const CONSTRAINT_TOL: f64 = 1e-9;

const NEWTON_MAX_ITER: usize = 30;
const NEWTON_TOL: f64 = 1e-13;
const NEWTON_ACCEPT: f64 = 1e-9;

/// Simulates square descriptor systems of index one.
///
/// `E = U diag(s) V^T` splits the semistate as `x = V1 xi + V2 eta`: the rows
/// `U1^T` give an ODE for `xi`, the rows `U2^T` are algebraic and are solved
/// for `eta` by Newton's method at every evaluation.
#[derive(Clone)]
pub struct DescriptorSimulator {
    sys: DescriptorSystem,
    /// `diag(s1)^-1 U1^T`
    u1t: Mat,
    u2t: Mat,
    v1: Mat,
    v2: Mat,
    constraint: Option<Mat>,
}

impl std::fmt::Debug for DescriptorSimulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DescriptorSimulator")
            .field("differential", &self.v1.ncols())
            .field("algebraic", &self.v2.ncols())
            .finish()
    }
}

impl DescriptorSimulator {
    pub fn new(sys: &DescriptorSystem) -> Result<Self, SimulationError> {
        sys.ensure_valid()?;
        let (m, n) = sys.e.shape();
        if m != n {
            return Err(SimulationError::Unsupported(format!(
                "E must be square for simulation, got {m}x{n}"
            )));
        }
        let svd = svd_decompose(&sys.e)?;
        let rank = svd.rank(default_rel_tol(m, n));
        let s1 = svd.singular_values.rows(0, rank).map(|s| 1.0 / s);
        let u1t = Mat::from_diagonal(&s1) * svd.u.columns(0, rank).transpose();
        Ok(Self {
            sys: sys.clone(),
            u1t,
            u2t: svd.u.columns(rank, n - rank).transpose(),
            v1: svd.v.columns(0, rank).into_owned(),
            v2: svd.v.columns(rank, n - rank).into_owned(),
            constraint: None,
        })
    }

    /// Attaches a linear constraint `W x = 0` that the initial state must
    /// satisfy; its residual is reported along the trajectory.
    pub fn with_constraint(mut self, w: Mat) -> Result<Self, SimulationError> {
        if w.ncols() != self.sys.e.ncols() {
            return Err(SimulationError::Length {
                what: "constraint columns",
                expected: self.sys.e.ncols(),
                got: w.ncols(),
            });
        }
        self.constraint = Some(w);
        Ok(self)
    }

    pub fn system(&self) -> &DescriptorSystem {
        &self.sys
    }

    pub fn differential_dim(&self) -> usize {
        self.v1.ncols()
    }

    /// `A x + B u + D v + F g(H K x, u)`.
    pub fn rhs(&self, x: &Vector, u: &Vector, v: &Vector) -> Vector {
        let s = &self.sys;
        let arg = &s.h * (&s.k * x);
        &s.a * x + &s.b * u + &s.d * v + &s.f * s.nonlinearity.eval(&arg, u)
    }

    pub(crate) fn xi_of(&self, x: &Vector) -> Vector {
        self.v1.transpose() * x
    }

    pub(crate) fn eta_of(&self, x: &Vector) -> Vector {
        self.v2.transpose() * x
    }

    fn lift(&self, xi: &Vector, eta: &Vector) -> Vector {
        &self.v1 * xi + &self.v2 * eta
    }

    /// Solves the algebraic rows for `eta` given `xi` and returns the full
    /// semistate.
    pub(crate) fn complete(
        &self,
        xi: &Vector,
        eta_guess: &Vector,
        t: f64,
        u: &Vector,
        v: &Vector,
    ) -> Result<Vector, SimulationError> {
        let na = self.v2.ncols();
        if na == 0 {
            return Ok(self.lift(xi, eta_guess));
        }
        let residual = |eta: &Vector| &self.u2t * self.rhs(&self.lift(xi, eta), u, v);
        let mut eta = eta_guess.clone();
        let mut r = residual(&eta);
        for _ in 0..NEWTON_MAX_ITER {
            if r.norm() <= NEWTON_TOL * (1.0 + eta.norm()) {
                break;
            }
            let mut jac = Mat::zeros(na, na);
            for j in 0..na {
                let delta = 1e-7 * (1.0 + eta[j].abs());
                let mut shifted = eta.clone();
                shifted[j] += delta;
                jac.set_column(j, &((residual(&shifted) - &r) / delta));
            }
            let step = LU::new(jac)
                .solve(&r)
                .ok_or(SimulationError::AlgebraicSolve { t, residual: r.norm() })?;
            eta -= &step;
            r = residual(&eta);
            if step.norm() <= 1e-15 * (1.0 + eta.norm()) {
                break;
            }
        }
        let res = r.norm();
        if res.is_nan() || res > NEWTON_ACCEPT * (1.0 + eta.norm()) {
            return Err(SimulationError::AlgebraicSolve { t, residual: res });
        }
        Ok(self.lift(xi, &eta))
    }

    /// `xi' = diag(s1)^-1 U1^T f(x)` for a consistent `x`.
    pub(crate) fn xi_dot(&self, x: &Vector, u: &Vector, v: &Vector, t: f64) -> Result<Vector, SimulationError> {
        ensure_finite_derivative(&self.u1t * self.rhs(x, u, v), t)
    }

    fn check_inputs(&self, x0: &Vector, u: &dyn Signal, v: &dyn Signal) -> Result<(), SimulationError> {
        let d = self.sys.dims();
        for (what, expected, got) in [
            ("x0", d.n, x0.len()),
            ("input u", d.k, u.dim()),
            ("disturbance v", d.q, v.dim()),
        ] {
            if expected != got {
                return Err(SimulationError::Length { what, expected, got });
            }
        }
        Ok(())
    }

    pub(crate) fn constraint_residual(&self, x: &Vector) -> f64 {
        self.constraint.as_ref().map_or(0.0, |w| (w * x).amax())
    }

    /// Checks `x0` against the attached constraint, then replaces its
    /// algebraic part by the solution of the algebraic rows at `t0`.
    pub(crate) fn consistent_initial_state(
        &self,
        x0: &Vector,
        u: &dyn Signal,
        v: &dyn Signal,
        t0: f64,
    ) -> Result<Vector, SimulationError> {
        self.check_inputs(x0, u, v)?;
        let residual = self.constraint_residual(x0);
        if residual > CONSTRAINT_TOL {
            return Err(SimulationError::InconsistentInitialState { residual });
        }
        self.complete(&self.xi_of(x0), &self.eta_of(x0), t0, &u.eval(0, t0), &v.eval(0, t0))
    }

    pub fn simulate(
        &self,
        x0: &Vector,
        u: &dyn Signal,
        v: &dyn Signal,
        grid: &Grid,
    ) -> Result<PlantTrajectory, SimulationError> {
        let x_init = self.consistent_initial_state(x0, u, v, grid.t0)?;
        let mut eta = self.eta_of(&x_init);
        let mut xs = Vec::with_capacity(grid.len());
        let mut xis = Vec::with_capacity(grid.len());
        let mut slopes = Vec::with_capacity(grid.steps);
        xis.push(self.xi_of(&x_init));
        xs.push(x_init);
        for k in 0..grid.steps {
            let t = grid.time(k);
            let t1 = grid.time(k + 1);
            let mut f = |k: usize, t: f64, xi: &Vector| {
                let (uk, vk) = (u.eval(k, t), v.eval(k, t));
                let x = self.complete(xi, &eta, t, &uk, &vk)?;
                eta = self.eta_of(&x);
                self.xi_dot(&x, &uk, &vk, t)
            };
            let (xi_next, d0) = rk4_step(&mut f, k, t, grid.h, &xis[k])?;
            let d1 = f(k, t1, &xi_next)?;
            slopes.push((d0, d1));
            let x = self.complete(&xi_next, &eta, t1, &u.eval(k + 1, t1), &v.eval(k + 1, t1))?;
            eta = self.eta_of(&x);
            xis.push(xi_next);
            xs.push(x);
        }
        let s = &self.sys;
        let mut traj = PlantTrajectory {
            grid: *grid,
            u: Vec::with_capacity(grid.len()),
            v: Vec::with_capacity(grid.len()),
            y: Vec::with_capacity(grid.len()),
            z: Vec::with_capacity(grid.len()),
            constraint_residual: Vec::with_capacity(grid.len()),
            x: Vec::new(),
            xi: xis,
            slopes,
            sim: self.clone(),
        };
        for (k, x) in xs.iter().enumerate() {
            let t = grid.time(k);
            let vk = v.eval(k, t);
            traj.y.push(&s.c * x + &s.g * &vk);
            traj.z.push(&s.k * x);
            traj.u.push(u.eval(k, t));
            traj.v.push(vk);
            traj.constraint_residual.push(self.constraint_residual(x));
        }
        traj.x = xs;
        Ok(traj)
    }
}

/// Plant trajectory on a grid with cubic Hermite dense output for the
/// differential coordinates.
#[derive(Debug, Clone)]
pub struct PlantTrajectory {
    pub grid: Grid,
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
    pub v: Vec<Vector>,
    pub y: Vec<Vector>,
    pub z: Vec<Vector>,
    /// `|W x|_inf` for the attached constraint, zero without one.
    pub constraint_residual: Vec<f64>,
    xi: Vec<Vector>,
    /// Derivative of `xi` at both ends of each step, disturbance held.
    slopes: Vec<(Vector, Vector)>,
    sim: DescriptorSimulator,
}

impl PlantTrajectory {
    pub fn simulator(&self) -> &DescriptorSimulator {
        &self.sim
    }

    /// Semistate at `t` in step `step`, with the disturbance held at its
    /// step value and the algebraic part solved for the input `u(t)`.
    pub fn state_at(&self, u: &dyn Signal, step: usize, t: f64) -> Result<Vector, SimulationError> {
        if step >= self.grid.steps {
            return Ok(self.x[self.grid.steps].clone());
        }
        let h = self.grid.h;
        let s = (t - self.grid.time(step)) / h;
        let (d0, d1) = &self.slopes[step];
        let (s2, s3) = (s * s, s * s * s);
        let xi = &self.xi[step] * (2.0 * s3 - 3.0 * s2 + 1.0)
            + d0 * (h * (s3 - 2.0 * s2 + s))
            + &self.xi[step + 1] * (-2.0 * s3 + 3.0 * s2)
            + d1 * (h * (s3 - s2));
        let eta = self.sim.eta_of(&self.x[step]);
        self.sim.complete(&xi, &eta, t, &u.eval(step, t), &self.v[step])
    }

    /// Functional `z = K x` as a signal.
    pub fn z_signal<'a>(&'a self, u: &'a dyn Signal) -> PlantOutput<'a> {
        PlantOutput {
            traj: self,
            u,
            measured: false,
        }
    }

    /// Measurement `y = C x + G v` as a signal.
    pub fn y_signal<'a>(&'a self, u: &'a dyn Signal) -> PlantOutput<'a> {
        PlantOutput {
            traj: self,
            u,
            measured: true,
        }
    }
}

/// Dense plant output. Evaluation failures yield NaN, which the consuming
/// integrator reports as a non-finite state.
pub struct PlantOutput<'a> {
    traj: &'a PlantTrajectory,
    u: &'a dyn Signal,
    measured: bool,
}

impl Signal for PlantOutput<'_> {
    fn dim(&self) -> usize {
        let s = self.traj.sim.system();
        if self.measured {
            s.c.nrows()
        } else {
            s.k.nrows()
        }
    }

    fn eval(&self, step: usize, t: f64) -> Vector {
        let s = self.traj.sim.system();
        let k = step.min(self.traj.grid.steps);
        match self.traj.state_at(self.u, step, t) {
            Ok(x) if self.measured => &s.c * x + &s.g * &self.traj.v[k],
            Ok(x) => &s.k * x,
            Err(_) => Vector::from_element(self.dim(), f64::NAN),
        }
    }
}

/// Simulates the rolling disc in descriptor form.
///
/// `x0` must roll without slipping (`|x2 - r x3| <= 1e-9`). Position and
/// velocity are integrated; the angular velocity is then taken from the
/// algebraic torque balance so that every descriptor equation holds along
/// the trajectory. The slip `x2 - r x3` is reported per step in
/// `constraint_residual`.
pub fn simulate_rolling_disc(
    params: &RollingDiscParams,
    x0: &Vector,
    u: &dyn Signal,
    lambda: &dyn Signal,
    grid: &Grid,
) -> Result<PlantTrajectory, SimulationError> {
    let sys = params.descriptor_system()?;
    DescriptorSimulator::new(&sys)?
        .with_constraint(params.kinematic_constraint())?
        .simulate(x0, u, lambda, grid)
}

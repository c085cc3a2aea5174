use super::plant::DescriptorSimulator;
use super::{ensure_finite_derivative, rk4, trapezoid, EnergyCertificate, Grid, Signal};
use crate::error::SimulationError;
use crate::matrix::{Mat, Vector};
use crate::synthesis::{FilterRealization, SynthesisBasis};
use crate::system::{DescriptorSystem, Nonlinearity};

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), SimulationError> {
    if expected == got {
        Ok(())
    } else {
        Err(SimulationError::Length { what, expected, got })
    }
}

fn check_filter(sys: &DescriptorSystem, filt: &FilterRealization) -> Result<(), SimulationError> {
    let d = sys.dims();
    let p = filt.order();
    for (what, mat, shape) in [
        ("filter N", &filt.n, (p, p)),
        ("filter T", &filt.t, (p, d.m)),
        ("filter L", &filt.l, (p, d.r)),
        ("filter M", &filt.m, (p, d.r)),
    ] {
        if mat.shape() != shape {
            return Err(SimulationError::Length {
                what,
                expected: shape.0 * shape.1,
                got: mat.nrows() * mat.ncols(),
            });
        }
    }
    check_len("filter order vs H columns", sys.h.ncols(), p)
}

/// Right-hand side of the filter `w' = N w + T B u + L y + T F g(H zhat, u)`
/// with `zhat = w + M y`.
struct FilterRhs<'a> {
    filt: &'a FilterRealization,
    h: &'a Mat,
    tb: Mat,
    tf: Mat,
    g: &'a Nonlinearity,
}

impl<'a> FilterRhs<'a> {
    fn new(sys: &'a DescriptorSystem, filt: &'a FilterRealization) -> Self {
        Self {
            filt,
            h: &sys.h,
            tb: &filt.t * &sys.b,
            tf: &filt.t * &sys.f,
            g: &sys.nonlinearity,
        }
    }

    fn z_hat(&self, w: &Vector, y: &Vector) -> Vector {
        w + &self.filt.m * y
    }

    fn eval(&self, w: &Vector, y: &Vector, u: &Vector, t: f64) -> Result<Vector, SimulationError> {
        let zh = self.z_hat(w, y);
        let d = &self.filt.n * w + &self.tb * u + &self.filt.l * y + &self.tf * self.g.eval(&(self.h * zh), u);
        ensure_finite_derivative(d, t)
    }
}

/// Filter states and estimates on a grid.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub grid: Grid,
    pub w: Vec<Vector>,
    pub z_hat: Vec<Vector>,
}

/// Runs the filter on a given measurement and input.
pub fn integrate_filter(
    sys: &DescriptorSystem,
    filt: &FilterRealization,
    y: &dyn Signal,
    u: &dyn Signal,
    w0: &Vector,
    grid: &Grid,
) -> Result<FilterRun, SimulationError> {
    check_filter(sys, filt)?;
    check_len("w0", filt.order(), w0.len())?;
    check_len("measurement y", sys.c.nrows(), y.dim())?;
    check_len("input u", sys.b.ncols(), u.dim())?;
    let rhs = FilterRhs::new(sys, filt);
    let w = rk4(|k, t, w| rhs.eval(w, &y.eval(k, t), &u.eval(k, t), t), grid, w0)?;
    let z_hat = w
        .iter()
        .enumerate()
        .map(|(k, wk)| rhs.z_hat(wk, &y.eval(k, grid.time(k))))
        .collect();
    Ok(FilterRun { grid: *grid, w, z_hat })
}

/// Joint plant and filter run. Every vector is recorded at the grid points;
/// the disturbance at point `k` is the value held on step `k`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub x: Vec<Vector>,
    pub w: Vec<Vector>,
    pub z: Vec<Vector>,
    pub z_hat: Vec<Vector>,
    /// `z - zhat`
    pub e: Vec<Vector>,
    /// `T E x - w`
    pub e1: Vec<Vector>,
    pub v: Vec<Vector>,
    pub u: Vec<Vector>,
    pub y: Vec<Vector>,
    pub constraint_residual: Vec<f64>,
}

impl Trajectory {
    pub fn energy_certificate(&self, gamma: f64, beta: f64) -> EnergyCertificate {
        super::energy_certificate(&self.grid, &self.e, &self.v, gamma, beta)
    }
}

/// Integrates plant and filter as one system with state `(xi, w)`, where
/// `xi` are the differential coordinates of the plant.
pub fn cosimulate(
    sim: &DescriptorSimulator,
    filt: &FilterRealization,
    x0: &Vector,
    w0: &Vector,
    u: &dyn Signal,
    v: &dyn Signal,
    grid: &Grid,
) -> Result<Trajectory, SimulationError> {
    let sys = sim.system();
    check_filter(sys, filt)?;
    check_len("w0", filt.order(), w0.len())?;
    let x_init = sim.consistent_initial_state(x0, u, v, grid.t0)?;
    let nd = sim.differential_dim();
    let p = filt.order();
    let rhs = FilterRhs::new(sys, filt);
    let measure = |x: &Vector, vk: &Vector| &sys.c * x + &sys.g * vk;

    let mut eta = sim.eta_of(&x_init);
    let mut state0 = Vector::zeros(nd + p);
    state0.rows_mut(0, nd).copy_from(&sim.xi_of(&x_init));
    state0.rows_mut(nd, p).copy_from(w0);
    let states = rk4(
        |k, t, s| {
            let (uk, vk) = (u.eval(k, t), v.eval(k, t));
            let x = sim.complete(&s.rows(0, nd).into_owned(), &eta, t, &uk, &vk)?;
            eta = sim.eta_of(&x);
            let w = s.rows(nd, p).into_owned();
            let mut d = Vector::zeros(nd + p);
            d.rows_mut(0, nd).copy_from(&sim.xi_dot(&x, &uk, &vk, t)?);
            d.rows_mut(nd, p).copy_from(&rhs.eval(&w, &measure(&x, &vk), &uk, t)?);
            Ok(d)
        },
        grid,
        &state0,
    )?;

    let te = &filt.t * &sys.e;
    let n = grid.len();
    let mut traj = Trajectory {
        grid: *grid,
        x: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        z_hat: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
        e1: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        constraint_residual: Vec::with_capacity(n),
    };
    let mut eta = sim.eta_of(&x_init);
    for (k, s) in states.iter().enumerate() {
        let t = grid.time(k);
        let (uk, vk) = (u.eval(k, t), v.eval(k, t));
        let x = if k == 0 {
            x_init.clone()
        } else {
            sim.complete(&s.rows(0, nd).into_owned(), &eta, t, &uk, &vk)?
        };
        eta = sim.eta_of(&x);
        let w = s.rows(nd, p).into_owned();
        let y = measure(&x, &vk);
        let z = &sys.k * &x;
        let z_hat = rhs.z_hat(&w, &y);
        traj.e.push(&z - &z_hat);
        traj.e1.push(&te * &x - &w);
        traj.constraint_residual.push(sim.constraint_residual(&x));
        traj.x.push(x);
        traj.w.push(w);
        traj.z.push(z);
        traj.z_hat.push(z_hat);
        traj.v.push(vk);
        traj.u.push(uk);
        traj.y.push(y);
    }
    Ok(traj)
}

/// Error dynamics `e1' = N e1 + T F dg + Bcal v`, `e = e1 - Htilde v` with
/// `dg = g(H z, u) - g(H (z - e), u)`.
#[derive(Clone)]
pub struct ErrorModel {
    pub n: Mat,
    pub tf: Mat,
    pub b_cal: Mat,
    pub h_tilde: Mat,
    pub h: Mat,
    pub nonlinearity: Nonlinearity,
}

impl std::fmt::Debug for ErrorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ErrorModel")
            .field("n", &self.n)
            .field("tf", &self.tf)
            .field("b_cal", &self.b_cal)
            .field("h_tilde", &self.h_tilde)
            .finish()
    }
}

impl ErrorModel {
    /// From the synthesis basis and the parameter `Z1` the filter came
    /// from: `Bcal = B1 - Z1 B2`, `Htilde = M1 G`.
    pub fn from_basis(
        basis: &SynthesisBasis,
        sys: &DescriptorSystem,
        filt: &FilterRealization,
        z1: &Mat,
    ) -> Result<Self, SimulationError> {
        check_filter(sys, filt)?;
        let (rows, cols) = basis.parameter_shape();
        if z1.shape() != (rows, cols) {
            return Err(SimulationError::Length {
                what: "Z1 entries",
                expected: rows * cols,
                got: z1.nrows() * z1.ncols(),
            });
        }
        Ok(Self {
            n: filt.n.clone(),
            tf: &filt.t * &sys.f,
            b_cal: &basis.b1 - z1 * &basis.b2,
            h_tilde: basis.h_tilde.clone(),
            h: sys.h.clone(),
            nonlinearity: sys.nonlinearity.clone(),
        })
    }

    /// From the filter matrices alone: `Bcal = T D - L G`, `Htilde = M G`.
    pub fn from_filter(sys: &DescriptorSystem, filt: &FilterRealization) -> Result<Self, SimulationError> {
        check_filter(sys, filt)?;
        Ok(Self {
            n: filt.n.clone(),
            tf: &filt.t * &sys.f,
            b_cal: &filt.t * &sys.d - &filt.l * &sys.g,
            h_tilde: &filt.m * &sys.g,
            h: sys.h.clone(),
            nonlinearity: sys.nonlinearity.clone(),
        })
    }

    pub fn output_error(&self, e1: &Vector, v: &Vector) -> Vector {
        e1 - &self.h_tilde * v
    }
}

#[derive(Debug, Clone)]
pub struct ErrorTrajectory {
    pub grid: Grid,
    pub e1: Vec<Vector>,
    /// `e1 - Htilde v` at each grid point.
    pub e: Vec<Vector>,
    pub v: Vec<Vector>,
    pub h_tilde: Mat,
}

impl ErrorTrajectory {
    pub fn energy_certificate(&self, gamma: f64, beta: f64) -> EnergyCertificate {
        super::energy_certificate(&self.grid, &self.e, &self.v, gamma, beta)
    }

    /// `sum |e|^2 dt` over the run, trapezoid rule.
    pub fn error_energy(&self) -> f64 {
        trapezoid(&self.grid, |k| self.e[k].norm_squared())
    }
}

/// Integrates the estimation error directly, given the true functional `z`.
pub fn integrate_error_dynamics(
    model: &ErrorModel,
    v: &dyn Signal,
    u: &dyn Signal,
    z: &dyn Signal,
    e1_0: &Vector,
    grid: &Grid,
) -> Result<ErrorTrajectory, SimulationError> {
    let p = model.n.nrows();
    check_len("e1(0)", p, e1_0.len())?;
    check_len("disturbance v", model.b_cal.ncols(), v.dim())?;
    check_len("functional z", p, z.dim())?;
    let e1 = rk4(
        |k, t, e1| {
            let (vk, uk, zk) = (v.eval(k, t), u.eval(k, t), z.eval(k, t));
            let e = model.output_error(e1, &vk);
            let g = &model.nonlinearity;
            let dg = g.eval(&(&model.h * &zk), &uk) - g.eval(&(&model.h * (&zk - e)), &uk);
            let d = &model.n * e1 + &model.tf * dg + &model.b_cal * vk;
            ensure_finite_derivative(d, t)
        },
        grid,
        e1_0,
    )?;
    let vs: Vec<Vector> = (0..grid.len()).map(|k| v.eval(k, grid.time(k))).collect();
    let e = e1.iter().zip(&vs).map(|(e1, vk)| model.output_error(e1, vk)).collect();
    Ok(ErrorTrajectory {
        grid: *grid,
        e1,
        e,
        v: vs,
        h_tilde: model.h_tilde.clone(),
    })
}

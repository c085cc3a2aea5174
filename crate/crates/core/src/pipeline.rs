//! End-to-end synthesis and the reference verification scenario.

use serde::{Deserialize, Serialize};

use crate::error::{LmiError, SimulationError, SynthesisError};
use crate::io::MatrixRepr;
use crate::lmi::{bisect_gamma, derive_beta, solve_feasibility, LmiProblem, LmiSolution};
use crate::matrix::{Mat, Vector};
use crate::simulation::integrate_error_dynamics;
use crate::simulation::{
    cosimulate, disturbance_generator, energy_certificate, lyapunov_decay_check, monte_carlo, DescriptorSimulator,
    EnergyCertificate, ErrorModel, FnSignal, Grid, HeldSignal, LyapunovCheck, Trajectory,
};
use crate::synthesis::{recover_filter, synthesis_basis, FilterRealization, SynthesisBasis, DESIGN_TOL};
use crate::system::DescriptorSystem;

/// Last stage the synthesis reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Rank condition fails: no filter of this structure exists.
    RankCondition,
    /// The LMI has no solution at the requested gain.
    Lmi,
    /// The recovered filter violates the design equations.
    Recovery,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVerdict {
    pub holds: bool,
    pub rank_big: usize,
    pub rank_small: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub stage: Stage,
    pub message: String,
    pub rank_condition: RankVerdict,
    pub feasible: bool,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_star: Option<f64>,
    pub lambda_max_pi: Option<f64>,
    pub lambda_max_omega: Option<f64>,
    pub lambda_min_q: Option<f64>,
    pub res_a: Option<f64>,
    pub res_b: Option<f64>,
    /// `e1(0)^T Q e1(0) / gamma^2` for the given initial states.
    pub beta: Option<f64>,
    pub obstructions: Vec<String>,
    #[serde(rename = "Q")]
    pub q: Option<MatrixRepr>,
    #[serde(rename = "Y")]
    pub y: Option<MatrixRepr>,
    #[serde(rename = "Z1")]
    pub z1: Option<MatrixRepr>,
    #[serde(rename = "Z")]
    pub z: Option<MatrixRepr>,
    #[serde(rename = "N")]
    pub n: Option<MatrixRepr>,
    #[serde(rename = "T")]
    pub t: Option<MatrixRepr>,
    #[serde(rename = "L")]
    pub l: Option<MatrixRepr>,
    #[serde(rename = "M")]
    pub m: Option<MatrixRepr>,
    #[serde(rename = "P")]
    pub p: Option<MatrixRepr>,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub gamma: f64,
    /// Bisection tolerance; when set the smallest feasible gain in
    /// `(0, gamma]` is also reported.
    pub bisect_tol: Option<f64>,
    /// Initial plant and filter states used to derive `beta`.
    pub initial_states: Option<(Vector, Vector)>,
}

impl SynthesisOptions {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            bisect_tol: None,
            initial_states: None,
        }
    }
}

/// Everything produced by [`synthesize`].
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub report: SynthesisReport,
    pub basis: Option<SynthesisBasis>,
    pub solution: Option<LmiSolution>,
    pub filter: Option<FilterRealization>,
}

impl Synthesis {
    pub fn succeeded(&self) -> bool {
        self.report.stage == Stage::Complete
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// Rank check, basis, LMI, recovery. Stage failures are reported in the
/// returned report; only invalid arguments and numerical breakdowns are
/// errors.
pub fn synthesize(sys: &DescriptorSystem, opts: &SynthesisOptions) -> Result<Synthesis, PipelineError> {
    if !(opts.gamma > 0.0 && opts.gamma.is_finite()) {
        return Err(LmiError::InvalidGamma(opts.gamma).into());
    }
    let rank = sys.check_rank_condition().map_err(SynthesisError::from)?;
    let mut report = SynthesisReport {
        stage: Stage::RankCondition,
        message: String::new(),
        rank_condition: RankVerdict {
            holds: rank.holds,
            rank_big: rank.rank_big,
            rank_small: rank.rank_small,
        },
        feasible: false,
        gamma: opts.gamma,
        gamma_star: None,
        lambda_max_pi: None,
        lambda_max_omega: None,
        lambda_min_q: None,
        res_a: None,
        res_b: None,
        beta: None,
        obstructions: Vec::new(),
        q: None,
        y: None,
        z1: None,
        z: None,
        n: None,
        t: None,
        l: None,
        m: None,
        p: None,
    };
    let mut out = Synthesis {
        report: report.clone(),
        basis: None,
        solution: None,
        filter: None,
    };
    if !rank.holds {
        report.message = format!(
            "rank condition fails: rank {} with K appended versus {} without",
            rank.rank_big, rank.rank_small
        );
        out.report = report;
        return Ok(out);
    }
    let basis = synthesis_basis(sys)?;
    let problem = LmiProblem::from_basis(&basis, sys, opts.gamma);
    let sol = solve_feasibility(&problem)?;
    report.stage = Stage::Lmi;
    report.feasible = sol.feasible;
    report.obstructions = sol.obstructions.iter().map(ToString::to_string).collect();
    if sol.feasible {
        report.lambda_max_pi = Some(sol.lambda_max_pi);
        report.lambda_max_omega = Some(sol.lambda_max_omega);
        report.lambda_min_q = Some(sol.lambda_min_q);
        report.q = Some(MatrixRepr::from_mat(&sol.q));
        report.y = Some(MatrixRepr::from_mat(&sol.y));
    }
    if let Some(tol) = opts.bisect_tol {
        match bisect_gamma(&problem, 0.0, opts.gamma, tol) {
            Ok((g, _)) => report.gamma_star = Some(g),
            Err(LmiError::UpperBoundInfeasible { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if !sol.feasible {
        report.message = format!("LMI infeasible at gamma = {}", opts.gamma);
        out.report = report;
        out.basis = Some(basis);
        out.solution = Some(sol);
        return Ok(out);
    }
    // Feasible solutions carry an invertible Q.
    let z1 = sol.z1.clone().expect("feasible solution has Z1");
    let rec = recover_filter(&basis, sys, &z1)?;
    let f = &rec.filter;
    report.res_a = Some(rec.residuals.res_a);
    report.res_b = Some(rec.residuals.res_b);
    report.z1 = Some(MatrixRepr::from_mat(&z1));
    report.z = f.z.as_ref().map(MatrixRepr::from_mat);
    report.n = Some(MatrixRepr::from_mat(&f.n));
    report.t = Some(MatrixRepr::from_mat(&f.t));
    report.l = Some(MatrixRepr::from_mat(&f.l));
    report.m = Some(MatrixRepr::from_mat(&f.m));
    report.p = Some(MatrixRepr::from_mat(&f.p));
    if let Some((x0, w0)) = &opts.initial_states {
        if x0.len() == sys.e.ncols() && w0.len() == f.order() {
            let e1 = &f.t * &sys.e * x0 - w0;
            report.beta = Some(derive_beta(&sol.q, &e1, opts.gamma));
        }
    }
    if rec.flagged {
        report.stage = Stage::Recovery;
        report.message = format!(
            "design equations violated: res_a = {:e}, res_b = {:e} (tolerance {DESIGN_TOL:e})",
            rec.residuals.res_a, rec.residuals.res_b
        );
    } else {
        report.stage = Stage::Complete;
        report.message = format!("filter of order {} certified at gamma = {}", f.order(), opts.gamma);
    }
    out.report = report;
    out.filter = Some(rec.filter);
    out.basis = Some(basis);
    out.solution = Some(sol);
    Ok(out)
}

/// Time span, signals and initial states of a verification run. The
/// defaults reproduce the rolling-disc experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub t_final: f64,
    pub step: f64,
    pub seed: u64,
    pub dist_window: (f64, f64),
    pub dist_amplitude: f64,
    pub gamma: f64,
    /// Offset in the energy inequality; `None` uses the value derived from `Q`.
    pub beta: Option<f64>,
    pub x0: Vector,
    pub w0: Vector,
    /// Input `u(t) = u_amplitude sin(u_omega t)` in every channel.
    pub u_amplitude: f64,
    pub u_omega: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            t_final: 10.0,
            step: 1e-3,
            seed: 0,
            dist_window: (2.0, 6.0),
            dist_amplitude: 1.0,
            gamma: 1.4,
            beta: Some(0.1),
            x0: Vector::from_vec(vec![0.1, 0.2, 0.1]),
            w0: Vector::from_element(1, 0.3),
            u_amplitude: 0.2,
            u_omega: std::f64::consts::PI,
        }
    }
}

impl Scenario {
    pub fn grid(&self) -> Result<Grid, SimulationError> {
        Grid::new(0.0, self.t_final, self.step)
    }

    fn input(&self, dim: usize) -> FnSignal<Box<dyn Fn(f64) -> Vector + Send + Sync>> {
        FnSignal::sine(dim, self.u_amplitude, self.u_omega)
    }

    fn disturbance(&self, seed: u64, grid: &Grid, dim: usize) -> Result<HeldSignal, SimulationError> {
        disturbance_generator(seed, grid, self.dist_window, self.dist_amplitude, dim)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub trajectory: Trajectory,
    pub certificate: EnergyCertificate,
    /// `e1(0)^T Q e1(0) / gamma^2` when `Q` is known.
    pub beta_derived: Option<f64>,
    pub final_error: f64,
    pub lyapunov: Option<LyapunovCheck>,
}

impl ScenarioRun {
    /// The offset used covers the initial Lyapunov energy.
    pub fn beta_sufficient(&self) -> Option<bool> {
        self.beta_derived.map(|b| self.certificate.beta >= b * (1.0 - 1e-12))
    }
}

/// Co-simulates plant and filter for one disturbance seed and evaluates
/// the energy certificate; with `Q` the Lyapunov inequality is checked on
/// the recorded error as well.
pub fn run_scenario(
    sim: &DescriptorSimulator,
    filt: &FilterRealization,
    q: Option<&Mat>,
    scenario: &Scenario,
    seed: u64,
) -> Result<ScenarioRun, SimulationError> {
    let sys = sim.system();
    let grid = scenario.grid()?;
    let u = scenario.input(sys.b.ncols());
    let v = scenario.disturbance(seed, &grid, sys.d.ncols())?;
    let traj = cosimulate(sim, filt, &scenario.x0, &scenario.w0, &u, &v, &grid)?;
    let beta_derived = q.map(|q| derive_beta(q, &traj.e1[0], scenario.gamma));
    let beta = scenario.beta.or(beta_derived).unwrap_or(0.0);
    let certificate = energy_certificate(&grid, &traj.e, &traj.v, scenario.gamma, beta);
    let lyapunov = match q {
        Some(q) => {
            let err = crate::simulation::ErrorTrajectory {
                grid,
                e1: traj.e1.clone(),
                e: traj.e.clone(),
                v: traj.v.clone(),
                h_tilde: &filt.m * &sys.g,
            };
            Some(lyapunov_decay_check(&err, q, scenario.gamma)?)
        }
        None => None,
    };
    Ok(ScenarioRun {
        final_error: traj.e[grid.steps].norm(),
        trajectory: traj,
        certificate,
        beta_derived,
        lyapunov,
    })
}

/// Energy certificates for `count` consecutive seeds, run in parallel.
pub fn certificate_batch(
    sim: &DescriptorSimulator,
    filt: &FilterRealization,
    q: Option<&Mat>,
    scenario: &Scenario,
    count: u64,
) -> Result<Vec<EnergyCertificate>, SimulationError> {
    let seeds: Vec<u64> = (0..count).map(|i| scenario.seed.wrapping_add(i)).collect();
    monte_carlo(&seeds, |seed| {
        run_scenario(sim, filt, q, scenario, seed).map(|r| r.certificate)
    })
}

/// Error run through the error dynamics alone, for cross-checking a
/// co-simulation: `z` comes from a separate plant run.
pub fn error_dynamics_run(
    sim: &DescriptorSimulator,
    model: &ErrorModel,
    scenario: &Scenario,
    e1_0: &Vector,
    seed: u64,
) -> Result<crate::simulation::ErrorTrajectory, SimulationError> {
    let sys = sim.system();
    let grid = scenario.grid()?;
    let u = scenario.input(sys.b.ncols());
    let v = scenario.disturbance(seed, &grid, sys.d.ncols())?;
    let plant = sim.simulate(&scenario.x0, &u, &v, &grid)?;
    integrate_error_dynamics(model, &v, &u, &plant.z_signal(&u), e1_0, &grid)
}

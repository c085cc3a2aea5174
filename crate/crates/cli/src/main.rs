use std::fmt::Display;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dskfilt::io::{self, LoadedFilter, SystemDescription};
use dskfilt::matrix::{eigenvalues, is_hurwitz};
use dskfilt::pipeline::{certificate_batch, run_scenario, synthesize, Scenario, Stage, SynthesisOptions};
use dskfilt::simulation::{write_trajectory_csv, CsvFooter, DescriptorSimulator};
use dskfilt::synthesis::{filter_shape_violations, verify_design_equations, DESIGN_TOL};
use dskfilt::{RollingDiscParams, SimulationError, Vector};

/// Exit codes, one per pipeline outcome.
mod exit {
    pub const OK: u8 = 0;
    pub const INVALID_INPUT: u8 = 1;
    pub const RANK_CONDITION: u8 = 2;
    pub const LMI_INFEASIBLE: u8 = 3;
    pub const VERIFY_FAILED: u8 = 4;
    pub const CERTIFICATE_VIOLATED: u8 = 5;
}

const OUT_ENV: &str = "DSKFILT_OUT";

#[derive(Parser)]
#[command(
    name = "dskfilt",
    version,
    about = "Functional H-infinity filters for nonlinear descriptor systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a filter and write the synthesis report.
    Synth(SynthArgs),
    /// Check a filter against the design equations of a system.
    Verify(VerifyArgs),
    /// Simulate plant and filter and evaluate the energy certificate.
    Simulate(SimulateArgs),
    /// Run the rolling-disc example end to end.
    Example(ExampleArgs),
}

#[derive(Args)]
struct OutDir {
    /// Output directory [default: $DSKFILT_OUT or the current directory].
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl OutDir {
    fn resolve(&self) -> Result<PathBuf, String> {
        let dir = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// System description (JSON).
    system: PathBuf,
    /// L2-gain level.
    #[arg(long, default_value_t = 1.4)]
    gamma: f64,
    /// Also report the smallest feasible gain in (0, gamma].
    #[arg(long)]
    bisect: bool,
    #[arg(long, default_value_t = 1e-4)]
    bisect_tol: f64,
    /// Initial plant state used to derive beta, comma separated.
    #[arg(long, value_parser = parse_vector)]
    x0: Option<Vector>,
    /// Initial filter state used to derive beta, comma separated.
    #[arg(long, value_parser = parse_vector)]
    w0: Option<Vector>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct VerifyArgs {
    system: PathBuf,
    /// Filter file with N, T, L, M and optionally P (a synthesis report works).
    filter: PathBuf,
    /// Largest accepted Frobenius residual.
    #[arg(long, default_value_t = DESIGN_TOL)]
    tol: f64,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 10.0)]
    t_final: f64,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disturbance window as `start,end`.
    #[arg(long, value_parser = parse_window, default_value = "2,6")]
    dist_window: (f64, f64),
    #[arg(long, default_value_t = 1.0)]
    dist_amplitude: f64,
    /// Offset in the energy inequality: a number, or `derived` for
    /// e1(0)^T Q e1(0) / gamma^2 (needs Q in the filter file).
    #[arg(long, default_value = "0.1")]
    beta: BetaArg,
    #[arg(long, value_parser = parse_vector, default_value = "0.1,0.2,0.1")]
    x0: Vector,
    #[arg(long, value_parser = parse_vector, default_value = "0.3")]
    w0: Vector,
    /// Number of disturbance realizations, seeds `seed..seed+runs`.
    #[arg(long, default_value_t = 1)]
    runs: u64,
}

#[derive(Args)]
struct SimulateArgs {
    system: PathBuf,
    filter: PathBuf,
    /// L2-gain level [default: gamma in the filter file, else 1.4].
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long, default_value_t = 1.4)]
    gamma: f64,
    /// Also report the smallest feasible gain.
    #[arg(long)]
    bisect: bool,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Clone, Copy, Debug)]
enum BetaArg {
    Value(f64),
    Derived,
}

impl std::str::FromStr for BetaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "derived" {
            return Ok(Self::Derived);
        }
        match s.parse::<f64>() {
            Ok(b) if b >= 0.0 && b.is_finite() => Ok(Self::Value(b)),
            _ => Err(format!("expected a non-negative number or `derived`, got `{s}`")),
        }
    }
}

fn parse_vector(s: &str) -> Result<Vector, String> {
    io::parse_vector(s)
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let v = io::parse_vector(s)?;
    if v.len() != 2 {
        return Err(format!("expected `start,end`, got {} numbers", v.len()));
    }
    Ok((v[0], v[1]))
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl Display) -> Self {
        Self {
            code: exit::INVALID_INPUT,
            message: message.to_string(),
        }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::INVALID_INPUT } else { exit::OK });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Example(a) => cmd_example(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn check_gamma(gamma: f64) -> Result<(), Failure> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Failure::invalid(format!("gamma must be positive, got {gamma}")))
    }
}

fn load_system(path: &Path) -> Result<SystemDescription, Failure> {
    io::load_system(path).map_err(Failure::invalid)
}

fn load_filter(path: &Path, desc: &SystemDescription) -> Result<LoadedFilter, Failure> {
    let loaded = io::load_filter(path).map_err(Failure::invalid)?;
    let problems = filter_shape_violations(&desc.system, &loaded.filter);
    if !problems.is_empty() {
        return Err(Failure::invalid(format!(
            "{} does not match the system: {}",
            path.display(),
            problems.join("; ")
        )));
    }
    Ok(loaded)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn stage_code(stage: Stage) -> u8 {
    match stage {
        Stage::Complete => exit::OK,
        Stage::RankCondition => exit::RANK_CONDITION,
        Stage::Lmi => exit::LMI_INFEASIBLE,
        Stage::Recovery => exit::VERIFY_FAILED,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:e}"))
}

/// Runs the synthesis and writes `synthesis_report.json` into `dir`.
fn synth_into(
    sys: &dskfilt::DescriptorSystem,
    opts: &SynthesisOptions,
    dir: &Path,
) -> Result<(u8, dskfilt::pipeline::Synthesis), Failure> {
    let out = synthesize(sys, opts).map_err(|e| Failure {
        code: match e {
            dskfilt::pipeline::PipelineError::Lmi(dskfilt::LmiError::InvalidGamma(_)) => exit::INVALID_INPUT,
            _ => exit::VERIFY_FAILED,
        },
        message: e.to_string(),
    })?;
    let r = &out.report;
    let path = dir.join("synthesis_report.json");
    write_text(&path, &serde_json::to_string_pretty(r).expect("report serializes"))?;
    println!(
        "rank condition: {} (rank {} vs {})",
        if r.rank_condition.holds { "holds" } else { "fails" },
        r.rank_condition.rank_big,
        r.rank_condition.rank_small
    );
    println!("gamma: {}  feasible: {}", r.gamma, r.feasible);
    if let Some(g) = r.gamma_star {
        println!("smallest feasible gamma: {g}");
    }
    println!(
        "lambda_max(Pi): {}  lambda_max(Omega): {}  lambda_min(Q): {}",
        fmt_opt(r.lambda_max_pi),
        fmt_opt(r.lambda_max_omega),
        fmt_opt(r.lambda_min_q)
    );
    println!("res_a: {}  res_b: {}", fmt_opt(r.res_a), fmt_opt(r.res_b));
    if let Some(b) = r.beta {
        println!("beta: {b}");
    }
    for o in &r.obstructions {
        println!("obstruction: {o}");
    }
    println!("{}", r.message);
    println!("report: {}", path.display());
    Ok((stage_code(r.stage), out))
}

fn cmd_synth(a: SynthArgs) -> Outcome {
    check_gamma(a.gamma)?;
    let desc = load_system(&a.system)?;
    let dir = a.out.resolve().map_err(Failure::invalid)?;
    let mut opts = SynthesisOptions::new(a.gamma);
    opts.bisect_tol = a.bisect.then_some(a.bisect_tol);
    opts.initial_states = a.x0.zip(a.w0);
    Ok(synth_into(&desc.system, &opts, &dir)?.0)
}

fn cmd_verify(a: VerifyArgs) -> Outcome {
    let desc = load_system(&a.system)?;
    let loaded = load_filter(&a.filter, &desc)?;
    let f = &loaded.filter;
    let res = verify_design_equations(&desc.system, f);
    let eig = eigenvalues(&f.n).map_err(Failure::invalid)?;
    let hurwitz = is_hurwitz(&f.n).map_err(Failure::invalid)?;
    println!("res_a: {:e}", res.res_a);
    println!("res_b: {:e}", res.res_b);
    println!("P - (N M - L): {:e}", f.substitution_residual());
    let shown: Vec<String> = eig
        .iter()
        .map(|&(re, im)| {
            if im == 0.0 {
                format!("{re}")
            } else {
                format!("{re}{im:+}i")
            }
        })
        .collect();
    println!("eig(N): [{}]  hurwitz: {hurwitz}", shown.join(", "));
    let ok = res.within(a.tol) && hurwitz;
    println!("tolerance {:e}: {}", a.tol, if ok { "pass" } else { "fail" });
    Ok(if ok { exit::OK } else { exit::VERIFY_FAILED })
}

fn scenario_from(args: &ScenarioArgs, gamma: f64) -> Scenario {
    Scenario {
        t_final: args.t_final,
        step: args.step,
        seed: args.seed,
        dist_window: args.dist_window,
        dist_amplitude: args.dist_amplitude,
        gamma,
        beta: match args.beta {
            BetaArg::Value(b) => Some(b),
            BetaArg::Derived => None,
        },
        x0: args.x0.clone(),
        w0: args.w0.clone(),
        ..Scenario::default()
    }
}

fn simulation_failure(e: SimulationError) -> Failure {
    let message = match &e {
        SimulationError::InconsistentInitialState { residual } => {
            format!("initial state violates x0_constraint (residual {residual:e})")
        }
        _ => e.to_string(),
    };
    Failure::invalid(message)
}

/// Runs the scenario, writes `trajectory.csv` and `certificate.json` and
/// returns the exit code of the certificate.
fn simulate_into(
    desc: &SystemDescription,
    loaded: &LoadedFilter,
    scenario: &Scenario,
    runs: u64,
    dir: &Path,
) -> Outcome {
    if runs == 0 {
        return Err(Failure::invalid("--runs must be at least 1"));
    }
    if scenario.beta.is_none() && loaded.q.is_none() {
        return Err(Failure::invalid("--beta derived needs Q in the filter file"));
    }
    let mut sim = DescriptorSimulator::new(&desc.system).map_err(simulation_failure)?;
    if let Some(w) = &desc.x0_constraint {
        sim = sim.with_constraint(w.clone()).map_err(simulation_failure)?;
    }
    let run =
        run_scenario(&sim, &loaded.filter, loaded.q.as_ref(), scenario, scenario.seed).map_err(simulation_failure)?;
    let cert = run.certificate;

    let mut footer = CsvFooter::with_certificate(&cert);
    if let Some(b) = run.beta_derived {
        footer.push("beta_derived", b);
    }
    footer.push("final_error", run.final_error);
    let csv_path = dir.join("trajectory.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Failure::invalid(format!("{}: {e}", csv_path.display())))?;
    write_trajectory_csv(&mut BufWriter::new(file), &run.trajectory, &footer)
        .map_err(|e| Failure::invalid(format!("{}: {e}", csv_path.display())))?;

    let mut all = vec![cert];
    if runs > 1 {
        let rest = Scenario {
            seed: scenario.seed.wrapping_add(1),
            ..scenario.clone()
        };
        all.extend(
            certificate_batch(&sim, &loaded.filter, loaded.q.as_ref(), &rest, runs - 1).map_err(simulation_failure)?,
        );
    }
    let satisfied = all.iter().filter(|c| c.satisfied).count();
    let summary = serde_json::json!({
        "gamma": scenario.gamma,
        "beta": cert.beta,
        "beta_derived": run.beta_derived,
        "beta_sufficient": run.beta_sufficient(),
        "final_error": run.final_error,
        "max_constraint_residual": run.trajectory.constraint_residual.iter().copied().fold(0.0, f64::max),
        "lyapunov": run.lyapunov,
        "runs": all.len(),
        "satisfied": satisfied,
        "certificates": all,
    });
    let cert_path = dir.join("certificate.json");
    write_text(
        &cert_path,
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    println!(
        "energy: int e'e = {:e} <= {:e} = gamma^2 (beta + int v'v): {}",
        cert.lhs, cert.rhs, cert.satisfied
    );
    if let Some(b) = run.beta_derived {
        println!("beta: {}  derived: {b}", cert.beta);
    }
    if let Some(l) = run.lyapunov {
        println!(
            "lyapunov: max violation {:e} (tolerance {:e}): {}",
            l.max_violation, l.tolerance, l.passed
        );
    }
    println!("|e(t_final)|: {:e}", run.final_error);
    if runs > 1 {
        println!("certificates satisfied: {satisfied}/{}", all.len());
    }
    println!("trajectory: {}", csv_path.display());
    Ok(if satisfied == all.len() {
        exit::OK
    } else {
        exit::CERTIFICATE_VIOLATED
    })
}

fn cmd_simulate(a: SimulateArgs) -> Outcome {
    let desc = load_system(&a.system)?;
    let loaded = load_filter(&a.filter, &desc)?;
    let gamma = a.gamma.or(loaded.gamma).unwrap_or(1.4);
    check_gamma(gamma)?;
    let dir = a.out.resolve().map_err(Failure::invalid)?;
    simulate_into(
        &desc,
        &loaded,
        &scenario_from(&a.scenario, gamma),
        a.scenario.runs,
        &dir,
    )
}

fn cmd_example(a: ExampleArgs) -> Outcome {
    check_gamma(a.gamma)?;
    let dir = a.out.resolve().map_err(Failure::invalid)?;
    let params = RollingDiscParams::default();
    let desc = SystemDescription {
        system: params.descriptor_system().map_err(Failure::invalid)?,
        x0_constraint: Some(params.kinematic_constraint()),
    };
    let sys_path = dir.join("system.json");
    io::save_system(&sys_path, &desc).map_err(Failure::invalid)?;
    println!("system: {}", sys_path.display());

    let scenario = scenario_from(&a.scenario, a.gamma);
    let mut opts = SynthesisOptions::new(a.gamma);
    opts.bisect_tol = a.bisect.then_some(1e-4);
    opts.initial_states = Some((scenario.x0.clone(), scenario.w0.clone()));
    let (code, out) = synth_into(&desc.system, &opts, &dir)?;
    if code != exit::OK {
        return Ok(code);
    }
    let loaded = LoadedFilter {
        filter: out.filter.expect("complete synthesis has a filter"),
        q: out.solution.map(|s| s.q),
        gamma: Some(a.gamma),
    };
    simulate_into(&desc, &loaded, &scenario, a.scenario.runs, &dir)
}

//! Gain-and-stability LMI in the decision variables `(Q, Y)`.
//!
//! With `Y = Q Z1` the matrix
//!
//! ```text
//!        [ A11 + I       A12     A13 - Ht            ]
//! Pi  =  [ A12^T         0       A23                 ]
//!        [ (A13 - Ht)^T  A23^T   A33 + Ht^T Ht - g^2 I ]
//! ```
//!
//! is affine in `(Q, Y)`, and `Pi <= 0` with `Q > 0` makes the filter built
//! from `Z1 = Q^-1 Y` stable with L2 gain at most `g` from disturbance to
//! error. The zero middle diagonal block forces `A12 = 0` and `A23 = 0` on any
//! negative semidefinite `Pi`. `A23 = -H Ht` is data, so it is checked up
//! front; `A12` is imposed as a linear equality on `(Q, Y)`, and the
//! remaining blocks are pushed strictly negative by eigenvalue minimization.

use crate::error::LmiError;
use crate::matrix::{max_symmetric_eigenvalue, min_symmetric_eigenvalue, mp_inverse, svd_decompose, Mat, Vector};
use crate::sdp::{minimize_max_eigenvalue, AffineSymmetric, BarrierOptions};
use crate::synthesis::SynthesisBasis;
use crate::system::DescriptorSystem;

/// Margin imposed on the reduced gain block: `Pi_13 <= -MARGIN I`.
pub const MARGIN: f64 = 1e-6;
/// Lower bound imposed on `Q`.
pub const Q_MARGIN: f64 = 1e-6;
/// Tolerance on the implied equalities `A12 = 0`, `H Ht = 0`.
pub const EQ_TOL: f64 = 1e-6;
/// Tolerance on `lambda_max(Pi)` when certifying a solution.
pub const CERT_TOL: f64 = 1e-7;

/// Coefficient matrices of the LMI.
#[derive(Debug, Clone)]
pub struct LmiData {
    pub n1: Mat,
    pub cal_n2: Mat,
    pub t1: Mat,
    pub cal_t2: Mat,
    pub f: Mat,
    pub h: Mat,
    pub h_tilde: Mat,
    pub h_scr: Mat,
    pub b1: Mat,
    pub b2: Mat,
}

impl LmiData {
    pub fn from_basis(basis: &SynthesisBasis, sys: &DescriptorSystem) -> Self {
        Self {
            n1: basis.base.n1.clone(),
            cal_n2: basis.cal_n2.clone(),
            t1: basis.base.t1.clone(),
            cal_t2: basis.cal_t2.clone(),
            f: sys.f.clone(),
            h: sys.h.clone(),
            h_tilde: basis.h_tilde.clone(),
            h_scr: basis.h_scr.clone(),
            b1: basis.b1.clone(),
            b2: basis.b2.clone(),
        }
    }

    /// Filter order.
    pub fn p(&self) -> usize {
        self.n1.nrows()
    }

    /// Nonlinearity width.
    pub fn l(&self) -> usize {
        self.f.ncols()
    }

    /// Disturbance width.
    pub fn q(&self) -> usize {
        self.b1.ncols()
    }

    /// Column count of `Y` (`m + 2r + p`).
    pub fn s(&self) -> usize {
        self.cal_n2.nrows()
    }

    fn check(&self) -> Result<(), LmiError> {
        let (p, l, q, s) = (self.p(), self.l(), self.q(), self.s());
        let m = self.t1.ncols();
        let expect = [
            ("N1", &self.n1, (p, p)),
            ("cal_N2", &self.cal_n2, (s, p)),
            ("T1", &self.t1, (p, m)),
            ("cal_T2", &self.cal_t2, (s, m)),
            ("F", &self.f, (m, l)),
            ("H", &self.h, (l, p)),
            ("H_tilde", &self.h_tilde, (p, q)),
            ("H_scr", &self.h_scr, (p, p)),
            ("B1", &self.b1, (p, q)),
            ("B2", &self.b2, (s, q)),
        ];
        for (block, mat, shape) in expect {
            if mat.shape() != shape {
                return Err(LmiError::Shape {
                    block,
                    expected: shape,
                    got: mat.shape(),
                });
            }
        }
        Ok(())
    }

    /// `A12 = (Q T1 - Y cal_T2) F + H^T`.
    pub fn coupling_block(&self, q: &Mat, y: &Mat) -> Mat {
        (q * &self.t1 - y * &self.cal_t2) * &self.f + self.h.transpose()
    }

    /// `|A23|_F = |H Ht|_F`; must vanish for any certificate to exist.
    pub fn disturbance_coupling(&self) -> f64 {
        (&self.h * &self.h_tilde).norm()
    }
}

/// The full symmetric matrix `Pi(Q, Y)` of size `p + l + q`.
pub fn assemble_blocks(data: &LmiData, q: &Mat, y: &Mat, gamma: f64, rho: f64) -> Result<Mat, LmiError> {
    data.check()?;
    let (p, l, nq, s) = (data.p(), data.l(), data.q(), data.s());
    if q.shape() != (p, p) {
        return Err(LmiError::Shape {
            block: "Q",
            expected: (p, p),
            got: q.shape(),
        });
    }
    if y.shape() != (p, s) {
        return Err(LmiError::Shape {
            block: "Y",
            expected: (p, s),
            got: y.shape(),
        });
    }
    let ht = &data.h_tilde;
    let a11 = data.n1.transpose() * q + q * &data.n1
        - data.cal_n2.transpose() * y.transpose()
        - y * &data.cal_n2
        - &data.h_scr * rho;
    let a12 = data.coupling_block(q, y);
    let a13 = q * &data.b1 - y * &data.b2 + &data.h_scr * ht * rho;
    let a23 = -(&data.h * ht);
    let a33 = -(ht.transpose() * &data.h_scr * ht) * rho;

    let n = p + l + nq;
    let mut pi = Mat::zeros(n, n);
    pi.view_mut((0, 0), (p, p)).copy_from(&(a11 + Mat::identity(p, p)));
    pi.view_mut((0, p), (p, l)).copy_from(&a12);
    pi.view_mut((p, 0), (l, p)).copy_from(&a12.transpose());
    let a13h = a13 - ht;
    pi.view_mut((0, p + l), (p, nq)).copy_from(&a13h);
    pi.view_mut((p + l, 0), (nq, p)).copy_from(&a13h.transpose());
    pi.view_mut((p, p + l), (l, nq)).copy_from(&a23);
    pi.view_mut((p + l, p), (nq, l)).copy_from(&a23.transpose());
    pi.view_mut((p + l, p + l), (nq, nq))
        .copy_from(&(a33 + ht.transpose() * ht - Mat::identity(nq, nq) * (gamma * gamma)));
    Ok((&pi + pi.transpose()) * 0.5)
}

/// Eigenvalue certificates for a candidate `(Q, Y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub lambda_max_pi: f64,
    pub lambda_min_q: f64,
    /// Largest eigenvalue of the leading `(p + l)` principal submatrix.
    pub lambda_max_omega: f64,
}

impl Certificate {
    /// Error decay without disturbance is certified.
    pub fn stable(&self) -> bool {
        self.lambda_max_omega <= CERT_TOL && self.lambda_min_q > 0.0
    }

    /// `Pi <= 0` within [`CERT_TOL`] and `Q >= Q_MARGIN I`.
    pub fn gain_certified(&self) -> bool {
        self.lambda_max_pi <= CERT_TOL && self.lambda_min_q >= Q_MARGIN
    }
}

pub fn evaluate_certificate(data: &LmiData, q: &Mat, y: &Mat, gamma: f64, rho: f64) -> Result<Certificate, LmiError> {
    let pi = assemble_blocks(data, q, y, gamma, rho)?;
    let w = data.p() + data.l();
    let omega = pi.view((0, 0), (w, w)).into_owned();
    Ok(Certificate {
        lambda_max_pi: max_symmetric_eigenvalue(&pi)?,
        lambda_min_q: min_symmetric_eigenvalue(q)?,
        lambda_max_omega: max_symmetric_eigenvalue(&omega)?,
    })
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub data: LmiData,
    pub gamma: f64,
    pub rho: f64,
    /// Strict-feasibility slack on the reduced gain block.
    pub margin: f64,
    pub q_margin: f64,
}

impl LmiProblem {
    pub fn new(data: LmiData, gamma: f64, rho: f64) -> Self {
        Self {
            data,
            gamma,
            rho,
            margin: MARGIN,
            q_margin: Q_MARGIN,
        }
    }

    pub fn from_basis(basis: &SynthesisBasis, sys: &DescriptorSystem, gamma: f64) -> Self {
        Self::new(LmiData::from_basis(basis, sys), gamma, sys.rho)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }
}

/// Why a problem was reported infeasible.
#[derive(Debug, Clone, PartialEq)]
pub enum Obstruction {
    /// `A23 = -H Ht` is nonzero, so `Pi` cannot be negative semidefinite.
    DisturbanceCoupling { norm: f64 },
    /// No `(Q, Y)` makes the coupling block `A12` vanish.
    CouplingUnsolvable { residual: f64 },
    /// The reduced gain block cannot be pushed below `-margin`.
    GainBlock { lambda_max: f64 },
    /// `Q` cannot be kept above `q_margin` together with the gain block.
    Positivity { lambda_min_q: f64 },
    /// The optimizer returned a point that fails the a posteriori check.
    Certificate { lambda_max_pi: f64, lambda_min_q: f64 },
}

impl std::fmt::Display for Obstruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Obstruction::DisturbanceCoupling { norm } => {
                write!(f, "block A23 = -H*Htilde is nonzero (|H Htilde| = {norm:e})")
            }
            Obstruction::CouplingUnsolvable { residual } => write!(
                f,
                "block A12 = (Q T1 - Y calT2) F + H^T cannot vanish (residual {residual:e})"
            ),
            Obstruction::GainBlock { lambda_max } => {
                write!(f, "gain block not negative definite (lambda_max = {lambda_max:e})")
            }
            Obstruction::Positivity { lambda_min_q } => {
                write!(f, "Q not positive definite (lambda_min = {lambda_min_q:e})")
            }
            Obstruction::Certificate {
                lambda_max_pi,
                lambda_min_q,
            } => write!(
                f,
                "certificate check failed (lambda_max(Pi) = {lambda_max_pi:e}, lambda_min(Q) = {lambda_min_q:e})"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub q: Mat,
    pub y: Mat,
    /// `Q^-1 Y`, present when `Q` is invertible.
    pub z1: Option<Mat>,
    pub gamma: f64,
    pub lambda_max_pi: f64,
    pub lambda_min_q: f64,
    pub lambda_max_omega: f64,
    /// Optimal value of the margin-shifted eigenvalue problem; negative
    /// means strictly feasible.
    pub objective: f64,
    pub feasible: bool,
    pub obstructions: Vec<Obstruction>,
}

/// Packs `(Q, Y)`: the upper triangle of `Q` row by row, then `Y` column-major.
struct Layout {
    p: usize,
    s: usize,
}

impl Layout {
    fn n_q(&self) -> usize {
        self.p * (self.p + 1) / 2
    }

    fn len(&self) -> usize {
        self.n_q() + self.p * self.s
    }

    fn unpack(&self, x: &[f64]) -> (Mat, Mat) {
        let p = self.p;
        let mut q = Mat::zeros(p, p);
        let mut idx = 0;
        for i in 0..p {
            for j in i..p {
                q[(i, j)] = x[idx];
                q[(j, i)] = x[idx];
                idx += 1;
            }
        }
        let y = Mat::from_column_slice(p, self.s, &x[idx..]);
        (q, y)
    }

    fn unit(&self, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        x[i] = 1.0;
        x
    }
}

/// Orthonormal basis of the null space of `a` (columns).
fn null_space(a: &Mat) -> Result<Mat, LmiError> {
    let n = a.ncols();
    let proj = Mat::identity(n, n) - mp_inverse(a, None)? * a;
    let svd = svd_decompose(&proj)?;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 0.5)
        .collect();
    Ok(svd.u.select_columns(&keep))
}

/// Finds `(Q, Y)` certifying the problem, or reports what blocks it.
pub fn solve_feasibility(problem: &LmiProblem) -> Result<LmiSolution, LmiError> {
    let gamma = problem.gamma;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(LmiError::InvalidGamma(gamma));
    }
    let data = &problem.data;
    data.check()?;
    let (p, l, nq, s) = (data.p(), data.l(), data.q(), data.s());
    let layout = Layout { p, s };
    let dim_x = layout.len();

    let infeasible = |obstruction: Obstruction, objective: f64| LmiSolution {
        q: Mat::zeros(p, p),
        y: Mat::zeros(p, s),
        z1: None,
        gamma,
        lambda_max_pi: f64::NAN,
        lambda_min_q: f64::NAN,
        lambda_max_omega: f64::NAN,
        objective,
        feasible: false,
        obstructions: vec![obstruction],
    };

    let coupling = data.disturbance_coupling();
    if coupling > EQ_TOL {
        return Ok(infeasible(
            Obstruction::DisturbanceCoupling { norm: coupling },
            f64::NAN,
        ));
    }

    // Equality A12(x) = 0, i.e. (Q T1 - Y cal_T2) F = -H^T.
    let zero_q = Mat::zeros(p, p);
    let zero_y = Mat::zeros(p, s);
    let a12_const = data.coupling_block(&zero_q, &zero_y);
    let mut eq_map = Mat::zeros(p * l, dim_x);
    for i in 0..dim_x {
        let (qi, yi) = layout.unpack(&layout.unit(i));
        let col = data.coupling_block(&qi, &yi) - &a12_const;
        eq_map.set_column(i, &Vector::from_column_slice(col.as_slice()));
    }
    let rhs = -Vector::from_column_slice(a12_const.as_slice());
    let x0 = mp_inverse(&eq_map, None)? * &rhs;
    let eq_residual = (&eq_map * &x0 - &rhs).norm();
    if eq_residual > 1e-9 * rhs.norm().max(1.0) {
        return Ok(infeasible(
            Obstruction::CouplingUnsolvable { residual: eq_residual },
            f64::NAN,
        ));
    }
    let null = null_space(&eq_map)?;

    // Reduced constraint: blockdiag(Pi_13 + margin I, q_margin I - Q) <= t I,
    // where Pi_13 keeps block rows/cols 1 and 3 of Pi.
    let keep: Vec<usize> = (0..p).chain(p + l..p + l + nq).collect();
    let reduced = |x: &[f64]| -> Result<Mat, LmiError> {
        let (q, y) = layout.unpack(x);
        let pi = assemble_blocks(data, &q, &y, gamma, problem.rho)?;
        let pi13 = pi.select_rows(&keep).select_columns(&keep);
        let w = pi13.nrows();
        let mut out = Mat::zeros(w + p, w + p);
        out.view_mut((0, 0), (w, w))
            .copy_from(&(pi13 + Mat::identity(w, w) * problem.margin));
        out.view_mut((w, w), (p, p))
            .copy_from(&(Mat::identity(p, p) * problem.q_margin - q));
        Ok(out)
    };
    let to_x = |xi: &Vector| -> Vec<f64> { (&x0 + &null * xi).iter().copied().collect() };

    let base = reduced(&to_x(&Vector::zeros(null.ncols())))?;
    let mut coefficients = Vec::with_capacity(null.ncols());
    for j in 0..null.ncols() {
        let mut e = Vector::zeros(null.ncols());
        e[j] = 1.0;
        coefficients.push(reduced(&to_x(&e))? - &base);
    }
    let affine = AffineSymmetric {
        constant: base,
        coefficients,
    };
    let opt = minimize_max_eigenvalue(&affine, &BarrierOptions::default())?;
    let x = to_x(&Vector::from_vec(opt.x.clone()));
    let (q, y) = layout.unpack(&x);

    if opt.t >= 0.0 {
        // Name the block that holds the optimum up.
        let pi = assemble_blocks(data, &q, &y, gamma, problem.rho)?;
        let pi13 = pi.select_rows(&keep).select_columns(&keep);
        let lam_pi = max_symmetric_eigenvalue(&pi13)? + problem.margin;
        let lam_q = min_symmetric_eigenvalue(&q)?;
        let obstruction = if lam_pi >= 0.0 || lam_q >= problem.q_margin {
            Obstruction::GainBlock { lambda_max: lam_pi }
        } else {
            Obstruction::Positivity { lambda_min_q: lam_q }
        };
        let mut sol = infeasible(obstruction, opt.t);
        sol.q = q;
        sol.y = y;
        return Ok(sol);
    }

    let cert = evaluate_certificate(data, &q, &y, gamma, problem.rho)?;
    let a12 = data.coupling_block(&q, &y).norm();
    let mut obstructions = Vec::new();
    if !cert.gain_certified() || a12 > EQ_TOL {
        obstructions.push(Obstruction::Certificate {
            lambda_max_pi: cert.lambda_max_pi,
            lambda_min_q: cert.lambda_min_q,
        });
    }
    let z1 = q.clone().try_inverse().map(|qi| qi * &y);
    Ok(LmiSolution {
        feasible: obstructions.is_empty() && z1.is_some(),
        q,
        y,
        z1,
        gamma,
        lambda_max_pi: cert.lambda_max_pi,
        lambda_min_q: cert.lambda_min_q,
        lambda_max_omega: cert.lambda_max_omega,
        objective: opt.t,
        obstructions,
    })
}

/// Smallest feasible gamma in `[gamma_lo, gamma_hi]` to within `tol_gamma`,
/// assuming feasibility is monotone in gamma.
pub fn bisect_gamma(
    problem: &LmiProblem,
    gamma_lo: f64,
    gamma_hi: f64,
    tol_gamma: f64,
) -> Result<(f64, LmiSolution), LmiError> {
    let mut best = solve_feasibility(&problem.with_gamma(gamma_hi))?;
    if !best.feasible {
        return Err(LmiError::UpperBoundInfeasible { gamma: gamma_hi });
    }
    let mut lo = gamma_lo.max(0.0);
    let mut hi = gamma_hi;
    if lo > 0.0 {
        let at_lo = solve_feasibility(&problem.with_gamma(lo))?;
        if at_lo.feasible {
            return Ok((lo, at_lo));
        }
    }
    while hi - lo > tol_gamma {
        let mid = 0.5 * (lo + hi);
        let sol = solve_feasibility(&problem.with_gamma(mid))?;
        if sol.feasible {
            hi = mid;
            best = sol;
        } else {
            lo = mid;
        }
    }
    Ok((hi, best))
}

/// `beta = e1(0)^T Q e1(0) / gamma^2`, the smallest offset for which the
/// energy inequality follows from the Lyapunov bound.
pub fn derive_beta(q: &Mat, e1_0: &Vector, gamma: f64) -> f64 {
    (e1_0.transpose() * q * e1_0)[(0, 0)] / (gamma * gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{recover_filter, synthesis_basis};
    use crate::system::RollingDiscParams;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn one(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    /// p = l = q = 1 with N1 = -2, T1 F = 1, H = -1 and no disturbance path.
    fn scalar_toy() -> LmiData {
        LmiData {
            n1: one(-2.0),
            cal_n2: one(0.0),
            t1: one(1.0),
            cal_t2: one(0.0),
            f: one(1.0),
            h: one(-1.0),
            h_tilde: one(0.0),
            h_scr: one(1.0),
            b1: one(0.0),
            b2: one(0.0),
        }
    }

    fn zero_data(p: usize, l: usize, q: usize, s: usize, m: usize) -> LmiData {
        LmiData {
            n1: Mat::zeros(p, p),
            cal_n2: Mat::zeros(s, p),
            t1: Mat::zeros(p, m),
            cal_t2: Mat::zeros(s, m),
            f: Mat::zeros(m, l),
            h: Mat::zeros(l, p),
            h_tilde: Mat::zeros(p, q),
            h_scr: Mat::zeros(p, p),
            b1: Mat::zeros(p, q),
            b2: Mat::zeros(s, q),
        }
    }

    fn disc_problem(gamma: f64) -> (LmiProblem, SynthesisBasis, DescriptorSystem) {
        let sys = RollingDiscParams::default().descriptor_system().unwrap();
        let basis = synthesis_basis(&sys).unwrap();
        (LmiProblem::from_basis(&basis, &sys, gamma), basis, sys)
    }

    #[test]
    fn direct_substitution_identity_q() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let mut rand = |r, c| Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let (p, l, q, s, m) = (2, 1, 2, 5, 3);
        let data = LmiData {
            n1: rand(p, p),
            cal_n2: rand(s, p),
            t1: rand(p, m),
            cal_t2: rand(s, m),
            f: rand(m, l),
            h: rand(l, p),
            h_tilde: Mat::zeros(p, q),
            h_scr: rand(p, p),
            b1: rand(p, q),
            b2: rand(s, q),
        };
        let gamma = 0.7;
        let pi = assemble_blocks(&data, &Mat::identity(p, p), &Mat::zeros(p, s), gamma, 0.0).unwrap();
        let expect_11 = &data.n1 + data.n1.transpose() + Mat::identity(p, p);
        let expect_12 = &data.t1 * &data.f + data.h.transpose();
        assert!((pi.view((0, 0), (p, p)) - expect_11).norm() < 1e-14);
        assert!((pi.view((0, p), (p, l)) - expect_12).norm() < 1e-14);
        assert!((pi.view((0, p + l), (p, q)) - &data.b1).norm() < 1e-14);
        assert!(pi.view((p, p), (l, l)).norm() == 0.0);
        assert!(pi.view((p, p + l), (l, q)).norm() == 0.0);
        assert!((pi.view((p + l, p + l), (q, q)) + Mat::identity(q, q) * gamma * gamma).norm() < 1e-14);
    }

    #[test]
    fn zero_basis_gives_diag() {
        let data = zero_data(2, 1, 1, 4, 3);
        let pi = assemble_blocks(&data, &Mat::identity(2, 2), &Mat::zeros(2, 4), 1.0, 0.0).unwrap();
        let expect = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 0.0, -1.0]));
        assert_eq!(pi, expect);
        let cert = evaluate_certificate(&data, &Mat::identity(2, 2), &Mat::zeros(2, 4), 1.0, 0.0).unwrap();
        assert_eq!(cert.lambda_max_omega, 1.0);
        assert!(!cert.stable());
    }

    #[test]
    fn scalar_toy_hand_evaluation() {
        let data = scalar_toy();
        let pi = assemble_blocks(&data, &one(1.0), &one(0.0), 1.0, 0.0).unwrap();
        assert_eq!(pi, Mat::from_diagonal(&Vector::from_vec(vec![-3.0, 0.0, -1.0])));
        let sol = solve_feasibility(&LmiProblem::new(data, 1.0, 0.0)).unwrap();
        assert!(sol.feasible, "{:?}", sol.obstructions);
        // The equality forces Q = 1.
        assert_relative_eq!(sol.q[(0, 0)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let data = scalar_toy();
        let r = assemble_blocks(&data, &Mat::identity(2, 2), &one(0.0), 1.0, 0.0);
        assert!(matches!(r, Err(LmiError::Shape { block: "Q", .. })));
    }

    #[test]
    fn affine_in_decision_variables() {
        let (problem, _, _) = disc_problem(1.4);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(19);
        for _ in 0..20 {
            let mut rand = |r, c| Mat::from_fn(r, c, |_, _| rng.random_range(-3.0..3.0));
            let q1 = rand(1, 1);
            let q2 = rand(1, 1);
            let y1 = rand(1, 8);
            let y2 = rand(1, 8);
            let alpha: f64 = rng.random_range(0.0..1.0);
            let mix = |a: &Mat, b: &Mat| a * alpha + b * (1.0 - alpha);
            let lhs = assemble_blocks(&problem.data, &mix(&q1, &q2), &mix(&y1, &y2), 1.4, 0.3).unwrap();
            let rhs = assemble_blocks(&problem.data, &q1, &y1, 1.4, 0.3).unwrap() * alpha
                + assemble_blocks(&problem.data, &q2, &y2, 1.4, 0.3).unwrap() * (1.0 - alpha);
            assert!((lhs - rhs).norm() <= 1e-10);
        }
    }

    #[test]
    fn rolling_disc_feasible_at_reference_gamma() {
        let (problem, basis, sys) = disc_problem(1.4);
        let sol = solve_feasibility(&problem).unwrap();
        assert!(sol.feasible, "{:?}", sol.obstructions);
        assert!(sol.lambda_max_pi <= 1e-7);
        assert!(sol.lambda_min_q >= 1e-6);
        assert!(sol.lambda_max_omega <= 1e-7);
        assert!(problem.data.coupling_block(&sol.q, &sol.y).norm() <= EQ_TOL);
        let rec = recover_filter(&basis, &sys, sol.z1.as_ref().unwrap()).unwrap();
        assert!(rec.residuals.within(1e-8));
        // Filter state matrix must be Hurwitz.
        assert!(rec.filter.n[(0, 0)] < 0.0);
    }

    #[test]
    fn rolling_disc_infeasible_at_tiny_gamma() {
        let (problem, _, _) = disc_problem(1e-6);
        let sol = solve_feasibility(&problem).unwrap();
        assert!(!sol.feasible);
        assert!(matches!(sol.obstructions[0], Obstruction::GainBlock { .. }));
    }

    #[test]
    fn invalid_gamma() {
        let (problem, _, _) = disc_problem(0.0);
        assert!(matches!(solve_feasibility(&problem), Err(LmiError::InvalidGamma(_))));
    }

    #[test]
    fn disturbance_coupling_is_a_precondition() {
        let mut data = scalar_toy();
        data.h_tilde = one(0.5);
        let sol = solve_feasibility(&LmiProblem::new(data, 1.0, 0.0)).unwrap();
        assert!(!sol.feasible);
        assert!(matches!(sol.obstructions[0], Obstruction::DisturbanceCoupling { .. }));
    }

    #[test]
    fn unsolvable_coupling_is_reported() {
        let mut data = scalar_toy();
        data.f = one(0.0); // A12 = H^T = -1 regardless of (Q, Y)
        let sol = solve_feasibility(&LmiProblem::new(data, 1.0, 0.0)).unwrap();
        assert!(matches!(sol.obstructions[0], Obstruction::CouplingUnsolvable { .. }));
    }

    #[test]
    fn midpoint_of_feasible_solutions_is_feasible() {
        let (p1, _, _) = disc_problem(1.4);
        let s1 = solve_feasibility(&p1).unwrap();
        let s2 = solve_feasibility(&p1.with_gamma(3.0)).unwrap();
        assert!(s1.feasible && s2.feasible);
        // Both are feasible at gamma = 3.
        let l1 = evaluate_certificate(&p1.data, &s1.q, &s1.y, 3.0, 0.0)
            .unwrap()
            .lambda_max_pi;
        let l2 = evaluate_certificate(&p1.data, &s2.q, &s2.y, 3.0, 0.0)
            .unwrap()
            .lambda_max_pi;
        let qm = (&s1.q + &s2.q) * 0.5;
        let ym = (&s1.y + &s2.y) * 0.5;
        let lm = evaluate_certificate(&p1.data, &qm, &ym, 3.0, 0.0)
            .unwrap()
            .lambda_max_pi;
        assert!(lm <= l1.max(l2) + 1e-9);
    }

    #[test]
    fn bisection_scalar_toy_matches_closed_form() {
        // With Q pinned to 1 the gain block is diag(-3, -gamma^2); the margin
        // requires gamma^2 >= MARGIN.
        let problem = LmiProblem::new(scalar_toy(), 1.0, 0.0);
        let (g, sol) = bisect_gamma(&problem, 0.0, 1.0, 1e-6).unwrap();
        assert!(sol.feasible);
        assert!((g - MARGIN.sqrt()).abs() <= 2e-6, "gamma* = {g}");
    }

    #[test]
    fn bisection_rolling_disc_below_reference_gamma() {
        let (problem, _, _) = disc_problem(1.4);
        let (g, sol) = bisect_gamma(&problem, 0.0, 1.4, 1e-4).unwrap();
        assert!(g <= 1.4);
        assert!(sol.feasible);
        assert!(!solve_feasibility(&problem.with_gamma(1e-6)).unwrap().feasible);
    }

    #[test]
    fn bisection_accepts_feasible_lower_bound() {
        let problem = LmiProblem::new(scalar_toy(), 1.0, 0.0);
        let (g, _) = bisect_gamma(&problem, 0.5, 1.0, 1e-3).unwrap();
        assert_eq!(g, 0.5);
    }

    #[test]
    fn bisection_rejects_infeasible_upper_bound() {
        let (problem, _, _) = disc_problem(1.4);
        assert_eq!(
            bisect_gamma(&problem, 0.0, 1e-5, 1e-6).unwrap_err(),
            LmiError::UpperBoundInfeasible { gamma: 1e-5 }
        );
    }

    #[test]
    fn beta_from_q() {
        let q = Mat::from_element(1, 1, 4.0);
        let e = Vector::from_element(1, -0.5);
        assert_relative_eq!(derive_beta(&q, &e, 2.0), 0.25);
    }
}

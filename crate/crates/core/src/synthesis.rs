//! Filter design equations and their solution family.
//!
//! A functional filter
//!
//! ```text
//! w' = N w + T B u + L y + T F g(H zhat, u)
//! zhat = w + M y
//! ```
//!
//! tracks `z = K x` when `T A - L C - N T E = 0` and `T E + M C - K = 0`.
//! Substituting `P = N M - L` makes both equations linear in `[T M P N]`:
//! `[T M P N] Psi = Theta` with `Psi = [E A; C 0; 0 C; 0 -K]` and
//! `Theta = [K 0]`. The general solution is `Theta Psi^+ - Z (I - Psi Psi^+)`.
//! Restricting `Z = Z1 (I - M2bar M2bar^+)` keeps `M G` independent of the
//! free parameter, which is what lets the gain condition be written as an LMI
//! in `Z1`.

use crate::error::SynthesisError;
use crate::matrix::{hstack, mp_inverse, solve_linear_matrix_equation, vstack, Mat};
use crate::system::{DescriptorSystem, Dims};

/// Absolute Frobenius tolerance on design-equation residuals.
pub const DESIGN_TOL: f64 = 1e-8;

/// `(Psi, Theta)` for the stacked design equation. Note the `-K` block.
pub fn assemble_psi_theta(sys: &DescriptorSystem) -> Result<(Mat, Mat), SynthesisError> {
    sys.ensure_valid()?;
    let Dims { n, r, p, .. } = sys.dims();
    let psi = vstack(&[
        &hstack(&[&sys.e, &sys.a]),
        &hstack(&[&sys.c, &Mat::zeros(r, n)]),
        &hstack(&[&Mat::zeros(r, n), &sys.c]),
        &hstack(&[&Mat::zeros(p, n), &(-&sys.k)]),
    ]);
    let theta = hstack(&[&sys.k, &Mat::zeros(p, n)]);
    Ok((psi, theta))
}

/// Column ranges of the `T`, `M`, `P`, `N` blocks inside a row of width
/// `m + 2r + p`.
#[derive(Debug, Clone, Copy)]
struct Blocks {
    m: usize,
    r: usize,
    p: usize,
}

impl Blocks {
    fn split(&self, x: &Mat) -> [Mat; 4] {
        let Blocks { m, r, p } = *self;
        [
            x.columns(0, m).into_owned(),
            x.columns(m, r).into_owned(),
            x.columns(m + r, r).into_owned(),
            x.columns(m + 2 * r, p).into_owned(),
        ]
    }
}

/// Minimum-norm solution and null-space selectors of `[T M P N] Psi = Theta`.
#[derive(Debug, Clone)]
pub struct BaseSolution {
    pub psi: Mat,
    pub theta: Mat,
    pub t1: Mat,
    pub t2: Mat,
    pub m1: Mat,
    pub m2: Mat,
    pub p1: Mat,
    pub p2: Mat,
    pub n1: Mat,
    pub n2: Mat,
    /// `|[T1 M1 P1 N1] Psi - Theta|_F`.
    pub residual: f64,
    dims: Dims,
}

impl BaseSolution {
    pub fn dims(&self) -> Dims {
        self.dims
    }
}

/// Solves the stacked design equation. Refuses when appending `Theta` raises
/// the rank of `Psi`, since then no filter of this structure exists.
pub fn compute_base_solution(psi: &Mat, theta: &Mat, dims: Dims) -> Result<BaseSolution, SynthesisError> {
    let sol = solve_linear_matrix_equation(psi, theta)?;
    if !sol.solvable {
        return Err(SynthesisError::RankCondition {
            rank_big: sol.rank_stacked,
            rank_small: sol.rank_y,
        });
    }
    let blocks = Blocks {
        m: dims.m,
        r: dims.r,
        p: dims.p,
    };
    let [t1, m1, p1, n1] = blocks.split(&sol.particular);
    let [t2, m2, p2, n2] = blocks.split(&sol.projector);
    let residual = (&sol.particular * psi - theta).norm();
    Ok(BaseSolution {
        psi: psi.clone(),
        theta: theta.clone(),
        t1,
        t2,
        m1,
        m2,
        p1,
        p2,
        n1,
        n2,
        residual,
        dims,
    })
}

/// Base solution plus the reduced matrices that enter the LMI.
#[derive(Debug, Clone)]
pub struct SynthesisBasis {
    pub base: BaseSolution,
    /// `M2 G`.
    pub m2bar: Mat,
    /// `I - M2bar M2bar^+`.
    pub reducer: Mat,
    pub cal_t2: Mat,
    pub cal_m2: Mat,
    pub cal_p2: Mat,
    pub cal_n2: Mat,
    pub b1: Mat,
    pub b2: Mat,
    /// `M1 G`.
    pub h_tilde: Mat,
    /// `H^T H`.
    pub h_scr: Mat,
    /// `|cal_M2 G|_F`; zero up to rounding.
    pub annihilation_residual: f64,
}

impl SynthesisBasis {
    pub fn dims(&self) -> Dims {
        self.base.dims
    }

    /// Shape of the free parameter `Z1`: `p x (m + 2r + p)`.
    pub fn parameter_shape(&self) -> (usize, usize) {
        let d = self.dims();
        (d.p, d.stacked_rows())
    }
}

pub fn compute_reduced(base: BaseSolution, sys: &DescriptorSystem) -> Result<SynthesisBasis, SynthesisError> {
    let m2bar = &base.m2 * &sys.g;
    let s = m2bar.nrows();
    let reducer = Mat::identity(s, s) - &m2bar * mp_inverse(&m2bar, None)?;
    let cal_t2 = &reducer * &base.t2;
    let cal_m2 = &reducer * &base.m2;
    let cal_p2 = &reducer * &base.p2;
    let cal_n2 = &reducer * &base.n2;
    let m1g = &base.m1 * &sys.g;
    let b1 = &base.t1 * &sys.d - &base.n1 * &m1g + &base.p1 * &sys.g;
    let b2 = &cal_t2 * &sys.d - &cal_n2 * &m1g + &cal_p2 * &sys.g;
    let h_scr = sys.h.transpose() * &sys.h;
    let annihilation_residual = (&cal_m2 * &sys.g).norm();
    Ok(SynthesisBasis {
        base,
        m2bar,
        reducer,
        cal_t2,
        cal_m2,
        cal_p2,
        cal_n2,
        b1,
        b2,
        h_tilde: m1g,
        h_scr,
        annihilation_residual,
    })
}

/// Steps 1-4 in one call: rank check, base solution, reduced matrices.
pub fn synthesis_basis(sys: &DescriptorSystem) -> Result<SynthesisBasis, SynthesisError> {
    let (psi, theta) = assemble_psi_theta(sys)?;
    let base = compute_base_solution(&psi, &theta, sys.dims())?;
    compute_reduced(base, sys)
}

/// Filter matrices with the parameters they were derived from, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRealization {
    pub n: Mat,
    pub t: Mat,
    pub l: Mat,
    pub m: Mat,
    pub p: Mat,
    pub z1: Option<Mat>,
    pub z: Option<Mat>,
}

impl FilterRealization {
    /// Builds a filter from `N, T, L, M`; `P` is recomputed as `N M - L`.
    pub fn from_ntlm(n: Mat, t: Mat, l: Mat, m: Mat) -> Self {
        let p = &n * &m - &l;
        Self {
            n,
            t,
            l,
            m,
            p,
            z1: None,
            z: None,
        }
    }

    /// Order of the filter (`p`).
    pub fn order(&self) -> usize {
        self.n.nrows()
    }

    /// `|P - (N M - L)|_F`.
    pub fn substitution_residual(&self) -> f64 {
        (&self.p - (&self.n * &self.m - &self.l)).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignResiduals {
    /// `|T A - L C - N T E|_F`.
    pub res_a: f64,
    /// `|T E + M C - K|_F`.
    pub res_b: f64,
}

impl DesignResiduals {
    pub fn max(&self) -> f64 {
        self.res_a.max(self.res_b)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.res_a <= tol && self.res_b <= tol
    }
}

/// Shape mismatches between a filter and a system, one message each.
pub fn filter_shape_violations(sys: &DescriptorSystem, filt: &FilterRealization) -> Vec<String> {
    let d = sys.dims();
    let p = filt.order();
    let expect = [
        ("N", &filt.n, (p, p)),
        ("T", &filt.t, (p, d.m)),
        ("L", &filt.l, (p, d.r)),
        ("M", &filt.m, (p, d.r)),
        ("P", &filt.p, (p, d.r)),
    ];
    let mut out: Vec<String> = expect
        .iter()
        .filter(|(_, m, shape)| m.shape() != *shape)
        .map(|(name, m, shape)| {
            format!(
                "{name} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                shape.0,
                shape.1
            )
        })
        .collect();
    if p != d.p {
        out.push(format!(
            "filter order {p} differs from the functional dimension {}",
            d.p
        ));
    }
    out
}

pub fn verify_design_equations(sys: &DescriptorSystem, filt: &FilterRealization) -> DesignResiduals {
    let te = &filt.t * &sys.e;
    let res_a = (&filt.t * &sys.a - &filt.l * &sys.c - &filt.n * &te).norm();
    let res_b = (te + &filt.m * &sys.c - &sys.k).norm();
    DesignResiduals { res_a, res_b }
}

/// A recovered filter together with its design-equation residuals.
#[derive(Debug, Clone)]
pub struct RecoveredFilter {
    pub filter: FilterRealization,
    pub residuals: DesignResiduals,
    /// Residuals above [`DESIGN_TOL`]; points at numerical trouble upstream.
    pub flagged: bool,
}

fn check_shape(expected: (usize, usize), got: &Mat) -> Result<(), SynthesisError> {
    if got.shape() != expected {
        return Err(SynthesisError::ParameterShape {
            expected,
            got: got.shape(),
        });
    }
    Ok(())
}

fn finish(sys: &DescriptorSystem, filter: FilterRealization) -> RecoveredFilter {
    let residuals = verify_design_equations(sys, &filter);
    RecoveredFilter {
        flagged: !residuals.within(DESIGN_TOL),
        filter,
        residuals,
    }
}

/// Filter for the reduced parameter `Z1`: `Z = Z1 (I - M2bar M2bar^+)`,
/// `T = T1 - Z1 cal_T2` and likewise for `M, P, N`; then `L = N M - P`.
pub fn recover_filter(
    basis: &SynthesisBasis,
    sys: &DescriptorSystem,
    z1: &Mat,
) -> Result<RecoveredFilter, SynthesisError> {
    check_shape(basis.parameter_shape(), z1)?;
    let b = &basis.base;
    let t = &b.t1 - z1 * &basis.cal_t2;
    let m = &b.m1 - z1 * &basis.cal_m2;
    let p = &b.p1 - z1 * &basis.cal_p2;
    let n = &b.n1 - z1 * &basis.cal_n2;
    let l = &n * &m - &p;
    let z = z1 * &basis.reducer;
    Ok(finish(
        sys,
        FilterRealization {
            n,
            t,
            l,
            m,
            p,
            z1: Some(z1.clone()),
            z: Some(z),
        },
    ))
}

/// Filter for a raw parameter `Z` of the unreduced family
/// `[T M P N] = Theta Psi^+ - Z (I - Psi Psi^+)`.
pub fn recover_filter_from_z(
    basis: &SynthesisBasis,
    sys: &DescriptorSystem,
    z: &Mat,
) -> Result<RecoveredFilter, SynthesisError> {
    check_shape(basis.parameter_shape(), z)?;
    let b = &basis.base;
    let t = &b.t1 - z * &b.t2;
    let m = &b.m1 - z * &b.m2;
    let p = &b.p1 - z * &b.p2;
    let n = &b.n1 - z * &b.n2;
    let l = &n * &m - &p;
    Ok(finish(
        sys,
        FilterRealization {
            n,
            t,
            l,
            m,
            p,
            z1: None,
            z: Some(z.clone()),
        },
    ))
}

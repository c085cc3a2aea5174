//! Nonlinear descriptor systems
//!
//! ```text
//! E x' = A x + B u + D v + F g(H K x, u)
//!    y = C x + G v
//!    z = K x
//! ```
//!
//! with `E, A` of shape `m x n`, `K` of shape `p x n` and a nonlinearity
//! `g: R^l x R^k -> R^l` obeying the generalized monotone condition
//! `dx^T dg + dg^T dx >= rho |dx|^2`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::SystemError;
use crate::matrix::{first_non_finite, min_symmetric_eigenvalue, paired_ranks, vstack, Mat, Vector};

/// Cap on redraws when a sampled pair collapses onto one point.
pub const MAX_RESAMPLES: usize = 100;

type NonlinearFn = dyn Fn(&Vector, &Vector) -> Vector + Send + Sync;

/// Named, evaluable nonlinearity `g(s, u)`. The function must be pure.
#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    func: Arc<NonlinearFn>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Nonlinearity").field(&self.name).finish()
    }
}

impl Nonlinearity {
    /// Names accepted by [`Nonlinearity::builtin`].
    pub const BUILTINS: [&'static str; 4] = ["zero", "identity", "cubic", "tanh"];

    pub fn new(name: impl Into<String>, func: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            func: Arc::new(func),
        }
    }

    /// Componentwise builtins: `zero`, `identity`, `cubic` (s^3), `tanh`.
    pub fn builtin(name: &str) -> Result<Self, SystemError> {
        let g = match name {
            "zero" => Self::new(name, |s: &Vector, _: &Vector| Vector::zeros(s.len())),
            "identity" => Self::new(name, |s: &Vector, _: &Vector| s.clone()),
            "cubic" => Self::new(name, |s: &Vector, _: &Vector| s.map(|x| x * x * x)),
            "tanh" => Self::new(name, |s: &Vector, _: &Vector| s.map(f64::tanh)),
            other => return Err(SystemError::UnknownNonlinearity(other.to_string())),
        };
        Ok(g)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, s: &Vector, u: &Vector) -> Vector {
        (self.func)(s, u)
    }
}

#[derive(Debug, Clone)]
pub struct DescriptorSystem {
    pub e: Mat,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub f: Mat,
    pub g: Mat,
    pub h: Mat,
    pub k: Mat,
    pub rho: f64,
    pub nonlinearity: Nonlinearity,
}

/// Problem found by [`DescriptorSystem::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Names of the matrices involved, e.g. `["K", "E"]`.
    pub subjects: Vec<&'static str>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) {}", self.subjects.join(", "), self.message)
    }
}

/// Sizes `(m, n, k, r, q, l, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub q: usize,
    pub l: usize,
    pub p: usize,
}

impl Dims {
    /// Row count of the stacked design matrix, `m + 2r + p`.
    pub fn stacked_rows(&self) -> usize {
        self.m + 2 * self.r + self.p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankCheck {
    pub holds: bool,
    pub rank_big: usize,
    pub rank_small: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityCheck {
    pub min_ratio: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeCheck {
    pub min_eig: f64,
    pub holds: bool,
}

/// Axis-aligned box used as the sampling domain of the nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "box bounds differ in length");
        Self { lower, upper }
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }),
        )
    }
}

impl DescriptorSystem {
    /// Sizes read off `E`, `B`, `C`, `D`, `F` and `K`. Only meaningful for
    /// systems that pass [`validate`](Self::validate).
    pub fn dims(&self) -> Dims {
        Dims {
            m: self.e.nrows(),
            n: self.e.ncols(),
            k: self.b.ncols(),
            r: self.c.nrows(),
            q: self.d.ncols(),
            l: self.f.ncols(),
            p: self.k.nrows(),
        }
    }

    fn named(&self) -> [(&'static str, &Mat); 9] {
        [
            ("E", &self.e),
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
            ("F", &self.f),
            ("G", &self.g),
            ("H", &self.h),
            ("K", &self.k),
        ]
    }

    /// Every dimension or finiteness problem; empty when the system is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (name, m) in self.named() {
            if let Some((i, j)) = first_non_finite(m) {
                out.push(Violation {
                    subjects: vec![name],
                    message: format!("non-finite entry at ({i}, {j})"),
                });
            }
        }
        if !self.rho.is_finite() {
            out.push(Violation {
                subjects: vec!["rho"],
                message: "rho must be finite".into(),
            });
        }

        let d = self.dims();
        let mut need =
            |subject: &'static str, reference: &'static str, axis: &str, got: usize, ref_axis: &str, want: usize| {
                if got != want {
                    out.push(Violation {
                        subjects: vec![subject, reference],
                        message: format!("{subject} has {got} {axis} but {reference} has {want} {ref_axis}"),
                    });
                }
            };
        need("A", "E", "rows", self.a.nrows(), "rows", d.m);
        need("A", "E", "columns", self.a.ncols(), "columns", d.n);
        need("B", "E", "rows", self.b.nrows(), "rows", d.m);
        need("C", "E", "columns", self.c.ncols(), "columns", d.n);
        need("D", "E", "rows", self.d.nrows(), "rows", d.m);
        need("F", "E", "rows", self.f.nrows(), "rows", d.m);
        need("G", "C", "rows", self.g.nrows(), "rows", d.r);
        need("G", "D", "columns", self.g.ncols(), "columns", d.q);
        need("H", "F", "rows", self.h.nrows(), "columns", d.l);
        need("H", "K", "columns", self.h.ncols(), "rows", d.p);
        need("K", "E", "columns", self.k.ncols(), "columns", d.n);
        out
    }

    pub fn ensure_valid(&self) -> Result<(), SystemError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SystemError::Invalid(v.iter().map(ToString::to_string).collect()))
        }
    }

    /// `([E A; C 0; 0 C; 0 K], [E A; C 0; 0 C; 0 K; K 0])`.
    pub fn rank_condition_matrices(&self) -> (Mat, Mat) {
        let Dims { n, r, p, .. } = self.dims();
        let top = crate::matrix::hstack(&[&self.e, &self.a]);
        let c0 = crate::matrix::hstack(&[&self.c, &Mat::zeros(r, n)]);
        let oc = crate::matrix::hstack(&[&Mat::zeros(r, n), &self.c]);
        let ok = crate::matrix::hstack(&[&Mat::zeros(p, n), &self.k]);
        let ko = crate::matrix::hstack(&[&self.k, &Mat::zeros(p, n)]);
        let small = vstack(&[&top, &c0, &oc, &ok]);
        let big = vstack(&[&small, &ko]);
        (small, big)
    }

    /// Solvability of the filter design equations: appending `[K 0]` must
    /// not raise the rank of `[E A; C 0; 0 C; 0 K]`.
    pub fn check_rank_condition(&self) -> Result<RankCheck, SystemError> {
        self.ensure_valid()?;
        let (small, big) = self.rank_condition_matrices();
        Ok(rank_check(&small, &big)?)
    }

    /// Smallest observed value of `2 dx^T dg / |dx|^2` over `n_pairs` random
    /// pairs `x_i = H s_i`, `s_i` drawn from `domain`. Inputs `u` cycle
    /// through `u_samples` (zero input when empty).
    pub fn check_monotonicity_sampled(
        &self,
        domain: &DomainBox,
        u_samples: &[Vector],
        n_pairs: usize,
        seed: u64,
    ) -> Result<MonotonicityCheck, SystemError> {
        let Dims { p, k, .. } = self.dims();
        if domain.dim() != p {
            return Err(SystemError::BoxDimension {
                expected: p,
                got: domain.dim(),
            });
        }
        let zero_u = Vector::zeros(k);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut min_ratio = f64::INFINITY;
        for i in 0..n_pairs.max(1) {
            let u = if u_samples.is_empty() {
                &zero_u
            } else {
                &u_samples[i % u_samples.len()]
            };
            let mut drawn = None;
            for _ in 0..=MAX_RESAMPLES {
                let x1 = &self.h * domain.sample(&mut rng);
                let x2 = &self.h * domain.sample(&mut rng);
                let dx = &x1 - &x2;
                if dx.norm_squared() > 0.0 {
                    drawn = Some((x1, x2, dx));
                    break;
                }
            }
            let (x1, x2, dx) = drawn.ok_or(SystemError::DegenerateSampling(MAX_RESAMPLES))?;
            let dg = self.nonlinearity.eval(&x1, u) - self.nonlinearity.eval(&x2, u);
            let ratio = 2.0 * dx.dot(&dg) / dx.norm_squared();
            min_ratio = min_ratio.min(ratio);
        }
        Ok(MonotonicityCheck {
            min_ratio,
            holds: min_ratio >= self.rho - 1e-9,
        })
    }

    /// Central-difference Jacobian of `g` in its first argument at each
    /// sample; holds when `lambda_min(J + J^T) >= rho - tol` everywhere.
    pub fn slope_bound_check(
        &self,
        samples: &[Vector],
        u: &Vector,
        fd_step: f64,
        tol: f64,
    ) -> Result<SlopeCheck, SystemError> {
        let mut min_eig = f64::INFINITY;
        for s in samples {
            let jac = fd_jacobian(&self.nonlinearity, s, u, fd_step);
            let sym = &jac + jac.transpose();
            min_eig = min_eig.min(min_symmetric_eigenvalue(&sym)?);
        }
        Ok(SlopeCheck {
            min_eig,
            holds: min_eig >= self.rho - tol,
        })
    }
}

/// Rank check on an explicit pair `(small, big)` where `big` extends `small`
/// by extra rows.
pub fn rank_check(small: &Mat, big: &Mat) -> Result<RankCheck, crate::error::LinalgError> {
    let (rank_small, rank_big) = paired_ranks(small, big)?;
    Ok(RankCheck {
        holds: rank_small == rank_big,
        rank_big,
        rank_small,
    })
}

fn fd_jacobian(g: &Nonlinearity, s: &Vector, u: &Vector, step: f64) -> Mat {
    let l = s.len();
    let mut jac = Mat::zeros(g.eval(s, u).len(), l);
    for j in 0..l {
        let mut plus = s.clone();
        let mut minus = s.clone();
        plus[j] += step;
        minus[j] -= step;
        let col = (g.eval(&plus, u) - g.eval(&minus, u)) / (2.0 * step);
        jac.set_column(j, &col);
    }
    jac
}

/// Physical parameters of the spring-damper rolling disc.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollingDiscParams {
    /// Linear spring coefficient.
    pub k1: f64,
    /// Cubic spring coefficient.
    pub k2: f64,
    /// Damping coefficient.
    pub b: f64,
    pub mass: f64,
    pub radius: f64,
    /// Moment of inertia about the disc centre.
    pub inertia: f64,
}

impl Default for RollingDiscParams {
    /// `k1/m = k2/m = 1`, `b/m = 2`, `r = 2`, `m = 1`, `J = 4`.
    fn default() -> Self {
        Self {
            k1: 1.0,
            k2: 1.0,
            b: 2.0,
            mass: 1.0,
            radius: 2.0,
            inertia: 4.0,
        }
    }
}

/// Output disturbance feedthrough of the rolling-disc sensor model.
pub const ROLLING_DISC_G: [f64; 2] = [0.35, 0.11];

impl RollingDiscParams {
    pub fn validate(&self) -> Result<(), SystemError> {
        let fields = [
            ("k1", self.k1),
            ("k2", self.k2),
            ("b", self.b),
            ("mass", self.mass),
            ("radius", self.radius),
            ("inertia", self.inertia),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SystemError::NonPositiveParameter(name));
            }
        }
        Ok(())
    }

    /// Rolling without slipping, `x2 - r x3 = 0`, as a row acting on `x`.
    pub fn kinematic_constraint(&self) -> Mat {
        Mat::from_row_slice(1, 3, &[0.0, 1.0, -self.radius])
    }

    /// Descriptor form with states `(position, velocity, angular velocity)`,
    /// measured outputs `y = (x1 + x2, x3) + G lambda`, functional `z = x1`,
    /// friction `lambda` as the disturbance and `g(s) = s^3`.
    pub fn descriptor_system(&self) -> Result<DescriptorSystem, SystemError> {
        self.validate()?;
        let Self {
            k1,
            k2,
            b,
            mass: m,
            radius: r,
            inertia: j,
        } = *self;
        Ok(DescriptorSystem {
            e: Mat::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            a: Mat::from_row_slice(3, 3, &[0.0, 1.0, 0.0, -k1 / m, -b / m, 0.0, -k1 / m, 0.0, -r * b / m]),
            b: Mat::from_row_slice(3, 1, &[0.0, 0.0, -r / j]),
            c: Mat::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            d: Mat::from_row_slice(3, 1, &[0.0, 1.0 / m, 1.0 / m + r * r / j]),
            f: Mat::from_row_slice(3, 1, &[0.0, -k2 / m, -k2 / m]),
            g: Mat::from_row_slice(2, 1, &ROLLING_DISC_G),
            h: Mat::from_element(1, 1, 1.0),
            k: Mat::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            rho: 0.0,
            nonlinearity: Nonlinearity::builtin("cubic")?,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn scalar_system(g: Nonlinearity, rho: f64) -> DescriptorSystem {
        let one = Mat::from_element(1, 1, 1.0);
        DescriptorSystem {
            e: one.clone(),
            a: one.clone(),
            b: one.clone(),
            c: one.clone(),
            d: one.clone(),
            f: one.clone(),
            g: one.clone(),
            h: one.clone(),
            k: one,
            rho,
            nonlinearity: g,
        }
    }

    #[test]
    fn rolling_disc_is_valid() {
        let sys = RollingDiscParams::default().descriptor_system().unwrap();
        assert!(sys.validate().is_empty());
        let d = sys.dims();
        assert_eq!((d.m, d.n, d.r, d.p, d.q, d.l, d.k), (3, 3, 2, 1, 1, 1, 1));
    }

    #[test]
    fn wrong_k_width_names_k_and_e() {
        let mut sys = RollingDiscParams::default().descriptor_system().unwrap();
        sys.k = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let v = sys.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].subjects, vec!["K", "E"]);
    }

    #[test]
    fn nan_in_a_names_a() {
        let mut sys = RollingDiscParams::default().descriptor_system().unwrap();
        sys.a[(1, 1)] = f64::NAN;
        let v = sys.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].subjects, vec!["A"]);
    }

    #[test]
    fn rank_condition_rolling_disc() {
        let sys = RollingDiscParams::default().descriptor_system().unwrap();
        let rc = sys.check_rank_condition().unwrap();
        assert!(rc.holds);
        assert_eq!(rc.rank_big, rc.rank_small);
    }

    #[test]
    fn rank_condition_with_k_a_row_of_c() {
        let mut sys = RollingDiscParams::default().descriptor_system().unwrap();
        sys.a = Mat::from_fn(3, 3, |i, j| (i as f64 + 1.0).sin() * (j as f64 - 0.3));
        sys.k = sys.c.rows(1, 1).into_owned();
        assert!(sys.check_rank_condition().unwrap().holds);
    }

    #[test]
    fn rank_condition_fails_on_zero_stack() {
        let mut sys = RollingDiscParams::default().descriptor_system().unwrap();
        sys.e.fill(0.0);
        sys.a.fill(0.0);
        sys.c.fill(0.0);
        let rc = sys.check_rank_condition().unwrap();
        assert!(!rc.holds);
        assert_eq!((rc.rank_small, rc.rank_big), (1, 2));
    }

    #[test]
    fn cubic_is_monotone_on_box() {
        let sys = RollingDiscParams::default().descriptor_system().unwrap();
        let res = sys
            .check_monotonicity_sampled(&DomainBox::cube(1, -2.0, 2.0), &[], 500, 1)
            .unwrap();
        assert!(res.holds && res.min_ratio >= 0.0);
    }

    #[test]
    fn identity_has_ratio_two() {
        let sys = scalar_system(Nonlinearity::builtin("identity").unwrap(), 2.0);
        let res = sys
            .check_monotonicity_sampled(&DomainBox::cube(1, -1.0, 1.0), &[], 50, 9)
            .unwrap();
        assert_relative_eq!(res.min_ratio, 2.0, epsilon = 1e-12);
        assert!(res.holds);
    }

    #[test]
    fn negated_identity_is_not_monotone() {
        let neg = Nonlinearity::new("neg", |s: &Vector, _: &Vector| -s);
        let sys = scalar_system(neg, 0.0);
        let res = sys
            .check_monotonicity_sampled(&DomainBox::cube(1, -1.0, 1.0), &[], 50, 9)
            .unwrap();
        assert_relative_eq!(res.min_ratio, -2.0, epsilon = 1e-12);
        assert!(!res.holds);
    }

    #[test]
    fn degenerate_box_fails_after_retries() {
        let sys = scalar_system(Nonlinearity::builtin("cubic").unwrap(), 0.0);
        let err = sys
            .check_monotonicity_sampled(&DomainBox::cube(1, 0.5, 0.5), &[], 3, 0)
            .unwrap_err();
        assert_eq!(err, SystemError::DegenerateSampling(MAX_RESAMPLES));
    }

    #[test]
    fn slope_bound_cubic() {
        let sys = scalar_system(Nonlinearity::builtin("cubic").unwrap(), 0.0);
        let u = Vector::zeros(1);
        let at0 = sys
            .slope_bound_check(&[Vector::from_element(1, 0.0)], &u, 1e-5, 1e-6)
            .unwrap();
        assert!(at0.holds);
        assert!(at0.min_eig.abs() < 1e-8);
        let at1 = sys
            .slope_bound_check(&[Vector::from_element(1, 1.0)], &u, 1e-5, 1e-6)
            .unwrap();
        // d/ds s^3 = 3 at s = 1, symmetrized 6.
        assert_relative_eq!(at1.min_eig, 6.0, epsilon = 1e-8);
    }

    #[test]
    fn slope_bound_affine() {
        let s_mat = Mat::from_row_slice(2, 2, &[1.0, 3.0, -1.0, 2.0]);
        let sm = s_mat.clone();
        let g = Nonlinearity::new("affine", move |s: &Vector, _: &Vector| {
            &sm * s + Vector::from_element(2, 0.5)
        });
        let mut sys = scalar_system(g, 0.0);
        sys.h = Mat::identity(2, 2);
        let expected = min_symmetric_eigenvalue(&(&s_mat + s_mat.transpose())).unwrap();
        let samples = [Vector::from_vec(vec![0.3, -1.0]), Vector::from_vec(vec![5.0, 2.0])];
        let res = sys.slope_bound_check(&samples, &Vector::zeros(1), 1e-4, 1e-6).unwrap();
        assert_relative_eq!(res.min_eig, expected, epsilon = 1e-8);
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(
            Nonlinearity::builtin("sine"),
            Err(SystemError::UnknownNonlinearity(_))
        ));
    }

    #[test]
    fn rolling_disc_rejects_nonpositive() {
        let p = RollingDiscParams {
            inertia: 0.0,
            ..Default::default()
        };
        assert_eq!(
            p.descriptor_system().unwrap_err(),
            SystemError::NonPositiveParameter("inertia")
        );
    }
}

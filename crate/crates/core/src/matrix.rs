//! Dense linear-algebra primitives used throughout the synthesis pipeline.
//!
//! Everything here operates on `nalgebra::DMatrix<f64>`. Rank decisions and
//! generalized inverses share one singular-value cutoff convention: a singular
//! value counts as nonzero when it exceeds `rel_tol * sigma_max`, with the
//! default `rel_tol = f64::EPSILON * max(rows, cols)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::LinalgError;

/// Dense real matrix.
pub type Mat = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

const SVD_MAX_SWEEPS: usize = 100;
const EIGEN_MAX_ITER: usize = 10_000;

/// Relative asymmetry accepted by the symmetric eigen routines.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Thin singular value decomposition `A = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    /// `rows x k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Mat,
    /// Non-increasing, non-negative.
    pub singular_values: Vector,
    /// `cols x k` with orthonormal columns.
    pub v: Mat,
}

impl SvdFactors {
    /// Multiplies the factors back together.
    pub fn reconstruct(&self) -> Mat {
        &self.u * Mat::from_diagonal(&self.singular_values) * self.v.transpose()
    }

    /// Largest singular value, zero for empty matrices.
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let cutoff = rel_tol * self.sigma_max();
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }
}

/// Default relative cutoff for an `rows x cols` matrix.
pub fn default_rel_tol(rows: usize, cols: usize) -> f64 {
    f64::EPSILON * rows.max(cols).max(1) as f64
}

/// Returns the first non-finite entry as `(row, col)`.
pub fn first_non_finite(a: &Mat) -> Option<(usize, usize)> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

pub fn ensure_finite(a: &Mat) -> Result<(), LinalgError> {
    match first_non_finite(a) {
        Some((row, col)) => Err(LinalgError::NonFinite { row, col }),
        None => Ok(()),
    }
}

/// Singular value decomposition by one-sided Jacobi rotations, which keeps
/// full relative accuracy on rank-deficient input. Singular values come out
/// sorted; `U` is completed to orthonormal columns where `sigma = 0`.
pub fn svd_decompose(a: &Mat) -> Result<SvdFactors, LinalgError> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    if m.min(n) == 0 {
        return Ok(SvdFactors {
            u: Mat::zeros(m, 0),
            singular_values: Vector::zeros(0),
            v: Mat::zeros(n, 0),
        });
    }
    if m < n {
        let t = svd_decompose(&a.transpose())?;
        return Ok(SvdFactors {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    let (w, v) = one_sided_jacobi(a.clone())?;

    let negligible = f64::EPSILON * a.norm();
    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, w.column(j).norm())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut u = Mat::zeros(m, n);
    let mut vs = Mat::zeros(n, n);
    let mut singular_values = Vector::zeros(n);
    let mut filled = Vec::new();
    for (dst, &(src, s)) in order.iter().enumerate() {
        vs.set_column(dst, &v.column(src));
        singular_values[dst] = s;
        if s > negligible {
            u.set_column(dst, &(w.column(src) / s));
        } else {
            filled.push(dst);
        }
    }
    // Columns at rounding level carry no direction; use the unit vector
    // that survives Gram-Schmidt against the others best.
    for dst in filled {
        let mut best = Vector::zeros(m);
        for i in 0..m {
            let mut e = Vector::zeros(m);
            e[i] = 1.0;
            for _ in 0..2 {
                for j in (0..n).filter(|&j| j != dst) {
                    let uj = u.column(j);
                    let c = uj.dot(&e);
                    e -= uj * c;
                }
            }
            if e.norm() > best.norm() {
                best = e;
            }
        }
        let norm = best.norm();
        u.set_column(dst, &(best / norm));
    }
    Ok(SvdFactors {
        u,
        singular_values,
        v: vs,
    })
}

/// Hestenes one-sided Jacobi on a tall matrix: returns `W = A V` with
/// mutually orthogonal columns and the orthogonal `V`. Columns at rounding
/// level relative to `|A|_F` are left alone.
fn one_sided_jacobi(mut w: Mat) -> Result<(Mat, Mat), LinalgError> {
    let n = w.ncols();
    let floor = (f64::EPSILON * w.norm()).powi(2);
    let tol = f64::EPSILON * w.nrows() as f64;
    let mut v = Mat::identity(n, n);
    for _ in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if alpha <= floor || beta <= floor || gamma.abs() <= tol * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            return Ok((w, v));
        }
    }
    Err(LinalgError::NoConvergence {
        routine: "svd",
        iterations: SVD_MAX_SWEEPS,
    })
}

fn rotate(a: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..a.nrows() {
        let x = a[(i, p)];
        let y = a[(i, q)];
        a[(i, p)] = c * x - s * y;
        a[(i, q)] = s * x + c * y;
    }
}

/// Number of entries strictly above `cutoff`.
pub fn count_above(values: &Vector, cutoff: f64) -> usize {
    values.iter().filter(|&&s| s > cutoff).count()
}

/// Ranks of `small` and of `big`, a row-extension of `small`, measured against
/// the same absolute cutoff derived from `big`.
pub fn paired_ranks(small: &Mat, big: &Mat) -> Result<(usize, usize), LinalgError> {
    let big_svd = svd_decompose(big)?;
    let cutoff = default_rel_tol(big.nrows(), big.ncols()) * big_svd.sigma_max();
    let small_svd = svd_decompose(small)?;
    Ok((
        count_above(&small_svd.singular_values, cutoff),
        count_above(&big_svd.singular_values, cutoff),
    ))
}

/// Moore-Penrose inverse with relative singular-value cutoff `rel_tol`
/// (`None` selects [`default_rel_tol`]).
pub fn mp_inverse(a: &Mat, rel_tol: Option<f64>) -> Result<Mat, LinalgError> {
    let (m, n) = a.shape();
    let svd = svd_decompose(a)?;
    let tol = rel_tol.unwrap_or_else(|| default_rel_tol(m, n));
    let cutoff = tol * svd.sigma_max();
    let mut out = Mat::zeros(n, m);
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let vi = svd.v.column(idx);
            let ui = svd.u.column(idx);
            out += (vi * ui.transpose()) / s;
        }
    }
    Ok(out)
}

pub fn numerical_rank(a: &Mat, rel_tol: Option<f64>) -> Result<usize, LinalgError> {
    let svd = svd_decompose(a)?;
    let tol = rel_tol.unwrap_or_else(|| default_rel_tol(a.nrows(), a.ncols()));
    Ok(svd.rank(tol))
}

/// `(S + S^T) / 2` after checking that `S` is square and symmetric to
/// [`SYMMETRY_TOL`] relative to its Frobenius norm.
pub fn symmetrized(s: &Mat) -> Result<Mat, LinalgError> {
    ensure_finite(s)?;
    if !s.is_square() {
        return Err(LinalgError::NotSquare {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    let asym = (s - s.transpose()).norm();
    let scale = s.norm();
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
        return Err(LinalgError::NotSymmetric {
            asymmetry: asym,
            norm: scale,
        });
    }
    Ok((s + s.transpose()) * 0.5)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(s: &Mat) -> Result<Vector, LinalgError> {
    let sym = symmetrized(s)?;
    if sym.nrows() == 0 {
        return Ok(Vector::zeros(0));
    }
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIGEN_MAX_ITER).ok_or(LinalgError::NoConvergence {
        routine: "symmetric eigen",
        iterations: EIGEN_MAX_ITER,
    })?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(Vector::from_vec(values))
}

/// Largest eigenvalue of a symmetric matrix; `-inf` for the empty matrix.
pub fn max_symmetric_eigenvalue(s: &Mat) -> Result<f64, LinalgError> {
    let values = symmetric_eigenvalues(s)?;
    Ok(values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Smallest eigenvalue of a symmetric matrix; `+inf` for the empty matrix.
pub fn min_symmetric_eigenvalue(s: &Mat) -> Result<f64, LinalgError> {
    let values = symmetric_eigenvalues(s)?;
    Ok(values.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Eigenvalues of a general square matrix as `(re, im)` pairs.
pub fn eigenvalues(a: &Mat) -> Result<Vec<(f64, f64)>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    ensure_finite(a)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur =
        nalgebra::Schur::try_new(a.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or(LinalgError::NoConvergence {
            routine: "schur",
            iterations: EIGEN_MAX_ITER,
        })?;
    Ok(schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect())
}

/// All eigenvalues in the open left half-plane.
pub fn is_hurwitz(a: &Mat) -> Result<bool, LinalgError> {
    Ok(eigenvalues(a)?.iter().all(|&(re, _)| re < 0.0))
}

/// Solution family of the linear matrix equation `X Y = Z`.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    /// `Z Y^+`, the minimum-norm solution when one exists.
    pub particular: Mat,
    /// `I - Y Y^+`; every solution is `particular - V * projector`.
    pub projector: Mat,
    pub solvable: bool,
    pub rank_y: usize,
    pub rank_stacked: usize,
}

impl LinearSolution {
    /// Member of the solution family selected by the free parameter `v`.
    pub fn member(&self, v: &Mat) -> Mat {
        &self.particular - v * &self.projector
    }
}

/// Solves `X Y = Z` for `X`.
///
/// Solvable exactly when `rank [Y; Z] = rank Y`; an unsolvable instance is a
/// regular return value with `solvable == false`.
pub fn solve_linear_matrix_equation(y: &Mat, z: &Mat) -> Result<LinearSolution, LinalgError> {
    if y.ncols() != z.ncols() {
        return Err(LinalgError::DimensionMismatch {
            what: "X Y = Z requires Y and Z to share their column count",
            left: y.shape(),
            right: z.shape(),
        });
    }
    let mut stacked = Mat::zeros(y.nrows() + z.nrows(), y.ncols());
    stacked.rows_mut(0, y.nrows()).copy_from(y);
    stacked.rows_mut(y.nrows(), z.nrows()).copy_from(z);

    let (rank_y, rank_stacked) = paired_ranks(y, &stacked)?;
    let y_pinv = mp_inverse(y, None)?;
    let particular = z * &y_pinv;
    let projector = Mat::identity(y.nrows(), y.nrows()) - y * &y_pinv;
    Ok(LinearSolution {
        particular,
        projector,
        solvable: rank_y == rank_stacked,
        rank_y,
        rank_stacked,
    })
}

/// Stacks matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column count mismatch");
        out.rows_mut(r, b.nrows()).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Places matrices with equal row counts side by side.
pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack: row count mismatch");
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn svd_of_identity() {
        let f = svd_decompose(&Mat::identity(3, 3)).unwrap();
        assert_eq!(f.singular_values.as_slice(), &[1.0, 1.0, 1.0]);
        assert!((f.reconstruct() - Mat::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn svd_of_singular_diagonal() {
        let a = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        let f = svd_decompose(&a).unwrap();
        assert_relative_eq!(f.singular_values[0], 3.0, epsilon = 1e-15);
        assert_relative_eq!(f.singular_values[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn svd_reconstructs_random_tall_matrix() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let a = random(&mut rng, 5, 3);
        let f = svd_decompose(&a).unwrap();
        let resid = (f.reconstruct() - &a).norm();
        assert!(resid <= 1e-10 * a.norm().max(1.0));
        let s = f.singular_values.as_slice();
        assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&x| x >= 0.0));
        assert!((f.u.transpose() * &f.u - Mat::identity(3, 3)).norm() < 1e-12);
        assert!((f.v.transpose() * &f.v - Mat::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn svd_rejects_nan() {
        let mut a = Mat::identity(2, 2);
        a[(1, 0)] = f64::NAN;
        assert!(matches!(
            svd_decompose(&a),
            Err(LinalgError::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn empty_matrices_are_handled() {
        let a = Mat::zeros(0, 4);
        assert_eq!(mp_inverse(&a, None).unwrap().shape(), (4, 0));
        assert_eq!(numerical_rank(&a, None).unwrap(), 0);
    }

    #[test]
    fn pinv_of_identity_and_zero() {
        assert_eq!(mp_inverse(&Mat::identity(4, 4), None).unwrap(), Mat::identity(4, 4));
        let z = mp_inverse(&Mat::zeros(3, 2), None).unwrap();
        assert_eq!(z, Mat::zeros(2, 3));
    }

    #[test]
    fn pinv_rank_two_penrose_identities() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let a = random(&mut rng, 4, 2) * random(&mut rng, 2, 3);
        let p = mp_inverse(&a, None).unwrap();
        let rel = |x: Mat, scale: f64| x.norm() / scale.max(1e-300);
        assert!(rel(&a * &p * &a - &a, a.norm()) < 1e-8);
        assert!(rel(&p * &a * &p - &p, p.norm()) < 1e-8);
        let ap = &a * &p;
        let pa = &p * &a;
        assert!(rel(&ap - ap.transpose(), ap.norm()) < 1e-8);
        assert!(rel(&pa - pa.transpose(), pa.norm()) < 1e-8);
        assert_eq!(numerical_rank(&a, None).unwrap(), 2);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&Mat::identity(4, 4), None).unwrap(), 4);
        let u = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = Vector::from_vec(vec![3.0, 1.0]);
        assert_eq!(numerical_rank(&(u * v.transpose()), None).unwrap(), 1);
        assert_eq!(numerical_rank(&Mat::zeros(3, 3), None).unwrap(), 0);
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(max_symmetric_eigenvalue(&-Mat::identity(3, 3)).unwrap(), -1.0);
        let d = Mat::from_diagonal(&Vector::from_vec(vec![2.0, -5.0]));
        assert_relative_eq!(max_symmetric_eigenvalue(&d).unwrap(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(min_symmetric_eigenvalue(&d).unwrap(), -5.0, epsilon = 1e-15);
    }

    /// Power iteration on `S + shift I`, shifted so the top eigenvalue dominates.
    fn power_iteration_max(s: &Mat) -> f64 {
        let shift = s.norm();
        let shifted = s + Mat::identity(s.nrows(), s.nrows()) * shift;
        let mut x = Vector::from_element(s.nrows(), 1.0).normalize();
        for _ in 0..20_000 {
            x = (&shifted * &x).normalize();
        }
        (x.transpose() * s * &x)[(0, 0)]
    }

    #[test]
    fn max_eigenvalue_matches_power_iteration() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let a = random(&mut rng, 6, 6);
        let s = &a + a.transpose();
        let oracle = power_iteration_max(&s);
        assert_relative_eq!(max_symmetric_eigenvalue(&s).unwrap(), oracle, epsilon = 1e-8);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let s = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            max_symmetric_eigenvalue(&s),
            Err(LinalgError::NotSymmetric { .. })
        ));
        // Rounding-level asymmetry is absorbed by symmetrization.
        let s = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0 + 1e-15, 1.0]);
        assert_relative_eq!(max_symmetric_eigenvalue(&s).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn xy_equation_identity_instance() {
        let z = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.5]);
        let sol = solve_linear_matrix_equation(&Mat::identity(3, 3), &z).unwrap();
        assert!(sol.solvable);
        assert!((sol.particular - &z).norm() < 1e-14);
        assert!(sol.projector.norm() < 1e-14);
    }

    #[test]
    fn xy_equation_zero_y_is_unsolvable() {
        let z = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let sol = solve_linear_matrix_equation(&Mat::zeros(3, 2), &z).unwrap();
        assert!(!sol.solvable);
        assert_eq!((sol.rank_y, sol.rank_stacked), (0, 1));
    }

    #[test]
    fn xy_equation_constructed_instance_whole_family() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        // Rank-deficient Y so the family is nontrivial.
        let y = random(&mut rng, 5, 3) * random(&mut rng, 3, 6);
        let x_true = random(&mut rng, 2, 5);
        let z = &x_true * &y;
        let sol = solve_linear_matrix_equation(&y, &z).unwrap();
        assert!(sol.solvable);
        assert!((&sol.particular * &y - &z).norm() <= 1e-9 * z.norm().max(1.0));
        for _ in 0..10 {
            let v = random(&mut rng, 2, 5);
            assert!((sol.member(&v) * &y - &z).norm() <= 1e-9 * z.norm().max(1.0));
        }
        let p = &sol.projector;
        assert!((p * p - p).norm() <= 1e-9);
    }

    #[test]
    fn xy_equation_rejects_mismatched_columns() {
        let r = solve_linear_matrix_equation(&Mat::zeros(2, 3), &Mat::zeros(2, 4));
        assert!(matches!(r, Err(LinalgError::DimensionMismatch { .. })));
    }

    #[test]
    fn general_eigenvalues() {
        let rot = Mat::from_row_slice(2, 2, &[-1.0, 2.0, -2.0, -1.0]);
        let mut ev = eigenvalues(&rot).unwrap();
        ev.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        assert!((ev[0].0 + 1.0).abs() < 1e-12 && (ev[0].1 + 2.0).abs() < 1e-12);
        assert!(is_hurwitz(&rot).unwrap());
        assert!(!is_hurwitz(&Mat::from_element(1, 1, 0.0)).unwrap());
        assert!(is_hurwitz(&Mat::from_element(1, 1, -1.0653)).unwrap());
        assert!(matches!(
            eigenvalues(&Mat::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
    }
}

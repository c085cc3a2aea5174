//! Eigenvalue minimization for affine symmetric matrix functions.
//!
//! Solves
//!
//! ```text
//! minimize t  subject to  F0 + sum_i x_i F_i <= t I,  |x| <= R
//! ```
//!
//! with a log-determinant barrier path-following method. An LMI
//! `F(x) <= 0` is strictly feasible exactly when the optimal `t` is negative,
//! so this one routine serves both as a feasibility test and as a way to
//! return a well-centred feasible point.

use crate::error::LmiError;
use crate::matrix::{max_symmetric_eigenvalue, svd_decompose, Mat, Vector};

/// `x -> F0 + sum_i x_i F_i` with symmetric `F0, F_i` of a common size.
#[derive(Debug, Clone)]
pub struct AffineSymmetric {
    pub constant: Mat,
    pub coefficients: Vec<Mat>,
}

impl AffineSymmetric {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (xi, fi) in x.iter().zip(&self.coefficients) {
            if *xi != 0.0 {
                out += fi * *xi;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    /// Bound on the decision vector norm.
    pub radius: f64,
    /// Stop once the barrier gap bound falls below `gap_tol * max(1, |t|)`.
    pub gap_tol: f64,
    /// Barrier weight growth factor per outer iteration.
    pub growth: f64,
    pub max_newton: usize,
    /// Return early once the optimum is certainly positive.
    pub stop_when_positive: bool,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            radius: 1e6,
            gap_tol: 1e-10,
            growth: 10.0,
            max_newton: 100,
            stop_when_positive: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenvalueMinimum {
    pub x: Vec<f64>,
    /// Max eigenvalue of `F(x)` at the returned point.
    pub t: f64,
    /// Lower bound on the optimal value.
    pub lower_bound: f64,
    pub newton_steps: usize,
}

struct Barrier<'a> {
    constant: &'a Mat,
    coeffs: Vec<Mat>,
    radius_sq: f64,
}

struct Local {
    value: f64,
    grad: Vector,
    hess: Mat,
}

impl Barrier<'_> {
    fn slack(&self, eta: &[f64], t: f64) -> Mat {
        let mut s = Mat::identity(self.constant.nrows(), self.constant.nrows()) * t - self.constant;
        for (e, g) in eta.iter().zip(&self.coeffs) {
            s -= g * *e;
        }
        s
    }

    /// Barrier value only; `None` outside the domain.
    fn value(&self, eta: &[f64], t: f64, weight: f64) -> Option<f64> {
        let norm_sq: f64 = eta.iter().map(|e| e * e).sum();
        let c = self.radius_sq - norm_sq;
        if c <= 0.0 {
            return None;
        }
        let chol = self.slack(eta, t).cholesky()?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Some(weight * t - logdet - c.ln())
    }

    fn local(&self, eta: &[f64], t: f64, weight: f64) -> Option<Local> {
        let k = eta.len();
        let norm_sq: f64 = eta.iter().map(|e| e * e).sum();
        let c = self.radius_sq - norm_sq;
        if c <= 0.0 {
            return None;
        }
        let chol = self.slack(eta, t).cholesky()?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let s_inv = chol.inverse();

        // Derivatives of S: -G_j for eta_j, identity for t.
        let mut w: Vec<Mat> = self.coeffs.iter().map(|g| -(&s_inv * g)).collect();
        w.push(s_inv.clone());
        let mut grad = Vector::zeros(k + 1);
        let mut hess = Mat::zeros(k + 1, k + 1);
        for a in 0..=k {
            grad[a] = -w[a].trace();
            for b in 0..=a {
                let h = w[a].component_mul(&w[b].transpose()).sum();
                hess[(a, b)] = h;
                hess[(b, a)] = h;
            }
        }
        grad[k] += weight;
        for j in 0..k {
            grad[j] += 2.0 * eta[j] / c;
            hess[(j, j)] += 2.0 / c;
            for i in 0..k {
                hess[(i, j)] += 4.0 * eta[i] * eta[j] / (c * c);
            }
        }
        Some(Local {
            value: weight * t - logdet - c.ln(),
            grad,
            hess,
        })
    }
}

fn newton_direction(hess: &Mat, grad: &Vector) -> Option<Vector> {
    let n = hess.nrows();
    let scale = hess.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1e-300);
    for reg in [0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
        let h = hess + Mat::identity(n, n) * (reg * scale);
        if let Some(ch) = h.cholesky() {
            return Some(-ch.solve(grad));
        }
    }
    None
}

/// Minimizes the largest eigenvalue of `f(x)` over `|x| <= radius`.
pub fn minimize_max_eigenvalue(f: &AffineSymmetric, opts: &BarrierOptions) -> Result<EigenvalueMinimum, LmiError> {
    let dim = f.dim();
    let n_vars = f.coefficients.len();

    // Restrict to directions that actually move F; the rest stay at zero.
    let (basis, coeffs) = if n_vars == 0 || dim == 0 {
        (Mat::zeros(n_vars, 0), Vec::new())
    } else {
        let mut stacked = Mat::zeros(dim * dim, n_vars);
        for (i, fi) in f.coefficients.iter().enumerate() {
            stacked.set_column(i, &Vector::from_column_slice(fi.as_slice()));
        }
        let svd = svd_decompose(&stacked)?;
        let cutoff = 1e-12 * svd.sigma_max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cutoff)
            .collect();
        let basis = svd.v.select_columns(&keep);
        let coeffs = (0..basis.ncols())
            .map(|j| {
                let mut g = Mat::zeros(dim, dim);
                for i in 0..n_vars {
                    let w = basis[(i, j)];
                    if w != 0.0 {
                        g += &f.coefficients[i] * w;
                    }
                }
                (&g + g.transpose()) * 0.5
            })
            .collect();
        (basis, coeffs)
    };
    let k = coeffs.len();
    let constant = (&f.constant + f.constant.transpose()) * 0.5;
    let barrier = Barrier {
        constant: &constant,
        coeffs,
        radius_sq: opts.radius * opts.radius,
    };

    let lift = |eta: &[f64]| -> Vec<f64> {
        let e = Vector::from_column_slice(eta);
        (&basis * e).iter().copied().collect()
    };

    if dim == 0 {
        return Ok(EigenvalueMinimum {
            x: vec![0.0; n_vars],
            t: f64::NEG_INFINITY,
            lower_bound: f64::NEG_INFINITY,
            newton_steps: 0,
        });
    }

    let mut eta = vec![0.0; k];
    let mut t = max_symmetric_eigenvalue(&constant)? + 1.0;
    // nu of the barrier: one per LMI row plus the norm ball.
    let nu = (dim + 1) as f64;
    let mut weight = 1.0 / t.abs().max(1.0);
    let mut steps = 0;

    loop {
        for _ in 0..opts.max_newton {
            let local = barrier
                .local(&eta, t, weight)
                .ok_or_else(|| LmiError::Barrier("iterate left the barrier domain".into()))?;
            let dir = newton_direction(&local.hess, &local.grad)
                .ok_or_else(|| LmiError::Barrier("singular Newton system".into()))?;
            let decrement = -local.grad.dot(&dir);
            if decrement / 2.0 <= 1e-12 {
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-14 {
                let cand_eta: Vec<f64> = eta.iter().zip(dir.iter()).map(|(e, d)| e + alpha * d).collect();
                let cand_t = t + alpha * dir[k];
                if let Some(v) = barrier.value(&cand_eta, cand_t, weight) {
                    if v <= local.value - 0.25 * alpha * decrement {
                        eta = cand_eta;
                        t = cand_t;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            steps += 1;
            if !accepted {
                break;
            }
        }

        let lam = max_symmetric_eigenvalue(&(barrier.slack(&eta, 0.0) * -1.0))?;
        let gap = nu / weight;
        let lower = lam - gap;
        if opts.stop_when_positive && lower > 0.0 {
            return Ok(EigenvalueMinimum {
                x: lift(&eta),
                t: lam,
                lower_bound: lower,
                newton_steps: steps,
            });
        }
        if gap <= opts.gap_tol * lam.abs().max(1.0) {
            return Ok(EigenvalueMinimum {
                x: lift(&eta),
                t: lam,
                lower_bound: lower,
                newton_steps: steps,
            });
        }
        weight *= opts.growth;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_only() {
        let f = AffineSymmetric {
            constant: Mat::from_diagonal(&Vector::from_vec(vec![-2.0, 0.5])),
            coefficients: vec![],
        };
        let r = minimize_max_eigenvalue(&f, &BarrierOptions::default()).unwrap();
        assert_relative_eq!(r.t, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_tradeoff() {
        // diag(x, 1 - 2x): the max is minimized at x = 1/3.
        let f = AffineSymmetric {
            constant: Mat::from_diagonal(&Vector::from_vec(vec![0.0, 1.0])),
            coefficients: vec![Mat::from_diagonal(&Vector::from_vec(vec![1.0, -2.0]))],
        };
        let opts = BarrierOptions {
            stop_when_positive: false,
            ..Default::default()
        };
        let r = minimize_max_eigenvalue(&f, &opts).unwrap();
        assert_relative_eq!(r.t, 1.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(r.x[0], 1.0 / 3.0, epsilon = 1e-6);
        assert!(r.lower_bound <= r.t);
    }

    #[test]
    fn off_diagonal_coupling() {
        // [[-1, x], [x, -1]] has max eigenvalue -1 + |x|, optimum at x = 0.
        let f = AffineSymmetric {
            constant: -Mat::identity(2, 2),
            coefficients: vec![Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
        };
        let r = minimize_max_eigenvalue(&f, &BarrierOptions::default()).unwrap();
        assert_relative_eq!(r.t, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn unbounded_direction_is_capped_by_radius() {
        // F = -x I decreases without bound; the radius stops it.
        let f = AffineSymmetric {
            constant: Mat::zeros(1, 1),
            coefficients: vec![-Mat::identity(1, 1)],
        };
        let opts = BarrierOptions {
            radius: 100.0,
            ..Default::default()
        };
        let r = minimize_max_eigenvalue(&f, &opts).unwrap();
        assert!(r.t < -99.0 && r.t >= -100.0);
    }

    #[test]
    fn redundant_coefficients_are_ignored() {
        let d = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -2.0]));
        let f = AffineSymmetric {
            constant: Mat::from_diagonal(&Vector::from_vec(vec![0.0, 1.0])),
            coefficients: vec![d.clone(), d * 2.0, Mat::zeros(2, 2)],
        };
        let opts = BarrierOptions {
            stop_when_positive: false,
            ..Default::default()
        };
        let r = minimize_max_eigenvalue(&f, &opts).unwrap();
        assert_relative_eq!(r.t, 1.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(r.x[2], 0.0);
    }

    #[test]
    fn positive_optimum_stops_early() {
        let f = AffineSymmetric {
            constant: Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0])),
            coefficients: vec![Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
        };
        let r = minimize_max_eigenvalue(&f, &BarrierOptions::default()).unwrap();
        assert!(r.lower_bound > 0.0);
    }
}

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::Grid;
use crate::error::SimulationError;
use crate::matrix::Vector;

/// An input evaluated at step index `step` and time `t` with
/// `t` in `[t_step, t_step + h]`.
pub trait Signal: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, step: usize, t: f64) -> Vector;
}

impl<S: Signal + ?Sized> Signal for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, step: usize, t: f64) -> Vector {
        (**self).eval(step, t)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroSignal(pub usize);

impl Signal for ZeroSignal {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval(&self, _: usize, _: f64) -> Vector {
        Vector::zeros(self.0)
    }
}

/// Continuous-time signal given by a closure of `t`.
pub struct FnSignal<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64) -> Vector + Sync> FnSignal<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl FnSignal<Box<dyn Fn(f64) -> Vector + Send + Sync>> {
    /// `amplitude * sin(omega * t)` in every component.
    pub fn sine(dim: usize, amplitude: f64, omega: f64) -> Self {
        Self::new(
            dim,
            Box::new(move |t| Vector::from_element(dim, amplitude * (omega * t).sin())),
        )
    }
}

impl<F: Fn(f64) -> Vector + Sync> Signal for FnSignal<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _: usize, t: f64) -> Vector {
        (self.f)(t)
    }
}

/// Piecewise-constant signal: value `k` is held on `[t_k, t_k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldSignal {
    dim: usize,
    values: Vec<Vector>,
}

impl HeldSignal {
    pub fn new(dim: usize, values: Vec<Vector>) -> Result<Self, SimulationError> {
        if values.is_empty() {
            return Err(SimulationError::Length {
                what: "held signal",
                expected: 1,
                got: 0,
            });
        }
        if let Some(bad) = values.iter().find(|v| v.len() != dim) {
            return Err(SimulationError::Length {
                what: "held signal sample",
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(dim: usize, grid: &Grid) -> Self {
        Self {
            dim,
            values: vec![Vector::zeros(dim); grid.len()],
        }
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }
}

impl Signal for HeldSignal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, step: usize, _: f64) -> Vector {
        self.values[step.min(self.values.len() - 1)].clone()
    }
}

/// Random disturbance held per step: uniform in `[-amplitude, amplitude]`
/// at grid times inside `window`, zero elsewhere. Uses xoshiro256++ seeded
/// through SplitMix64, so a seed gives the same samples on every platform.
pub fn disturbance_generator(
    seed: u64,
    grid: &Grid,
    window: (f64, f64),
    amplitude: f64,
    dim: usize,
) -> Result<HeldSignal, SimulationError> {
    let (a, b) = window;
    let slack = 1e-9 * grid.h;
    if a.is_nan() || b.is_nan() || a > b || a < grid.t0 - slack || b > grid.t_final() + slack {
        return Err(SimulationError::Grid(format!(
            "disturbance window [{a}, {b}] is not inside [{}, {}]",
            grid.t0,
            grid.t_final()
        )));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(SimulationError::Grid(format!(
            "disturbance amplitude must be finite and non-negative, got {amplitude}"
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let values = grid
        .times()
        .map(|t| {
            if t >= a - slack && t <= b + slack {
                Vector::from_fn(dim, |_, _| amplitude * (2.0 * rng.random::<f64>() - 1.0))
            } else {
                Vector::zeros(dim)
            }
        })
        .collect();
    HeldSignal::new(dim, values)
}

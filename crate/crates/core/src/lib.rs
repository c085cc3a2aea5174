//! Functional filter synthesis for nonlinear descriptor systems
//! `E x' = A x + B u + D v + F g(H K x, u)`, `y = C x + G v`, `z = K x`.
//!
//! The pipeline checks the rank condition, builds the parameterized
//! solution of the design equations, solves the gain LMI, recovers the
//! filter `w' = N w + T B u + L y + T F g(H zhat, u)`, `zhat = w + M y`,
//! and verifies it by simulation.

pub mod error;
pub mod io;
pub mod lmi;
pub mod matrix;
pub mod pipeline;
pub mod sdp;
pub mod simulation;
pub mod synthesis;
pub mod system;

pub use error::{FormatError, LinalgError, LmiError, SimulationError, SynthesisError, SystemError};
pub use lmi::{LmiProblem, LmiSolution};
pub use matrix::{Mat, Vector};
pub use pipeline::{synthesize, Scenario, Stage, SynthesisOptions, SynthesisReport};
pub use synthesis::{FilterRealization, SynthesisBasis};
pub use system::{DescriptorSystem, Nonlinearity, RollingDiscParams};

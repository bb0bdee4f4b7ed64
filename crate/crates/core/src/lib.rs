//! Neural ODE training with stochastic end-time regularization.
//!
//! The crate bundles the numerical substrate (dense arrays, a reverse-mode
//! tape, dual numbers, explicit Runge–Kutta solvers) with the experiments
//! built on it:
//!
//! * [`stiff`]: learning a stiff linear ODE family from short intervals,
//!   with and without randomized end times.
//! * [`picard`]: numerical checks of the randomized Picard operator.
//! * [`cnf`]: a one-dimensional continuous normalizing flow with exact trace.

pub mod autodiff;
pub mod cnf;
pub mod dual;
pub mod error;
pub mod mlp;
pub mod ode;
pub mod optim;
pub mod picard;
pub mod report;
pub mod steer;
pub mod stiff;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use dual::Dual;
pub use error::{Error, Result};
pub use mlp::{grad_check, Mlp, MlpVars};
pub use ode::{Method, SolveResult, SolverConfig};
pub use steer::{EndTimeSampler, RngStream, SamplerKind};
pub use tensor::Array;

/// Version string written into every output file's metadata block.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

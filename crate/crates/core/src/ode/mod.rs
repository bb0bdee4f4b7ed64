//! Explicit Runge–Kutta initial-value solvers.
//!
//! Both methods are written once against a small stage-arithmetic backend so
//! that the plain path and the recorded (differentiable) path perform the
//! same floating-point operations in the same order. An adaptive solve on the
//! tape therefore accepts exactly the steps the plain solve accepts.

mod grad;
mod solvers;

pub use grad::{solve_grad_check, solve_loss_grad, solve_loss_on_schedule, LossGrad, SolveGradCheck};
pub use solvers::{
    dopri5_solve, dopri5_solve_traced, replay_schedule, replay_schedule_traced, rk4_solve,
    rk4_solve_traced, solve, solve_traced,
};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpVars};
use crate::tensor::Array;

/// Right-hand side `dz/dt = f(t, z)`.
pub trait Dynamics {
    fn eval(&self, t: f64, z: &Array) -> Result<Array>;
}

impl<F> Dynamics for F
where
    F: Fn(f64, &Array) -> Result<Array>,
{
    fn eval(&self, t: f64, z: &Array) -> Result<Array> {
        self(t, z)
    }
}

/// Right-hand side recorded on a [`Tape`].
pub trait TracedDynamics {
    fn eval_traced(&self, tape: &mut Tape, t: f64, z: Var) -> Result<Var>;
}

/// An [`Mlp`] used as a vector field.
#[derive(Clone, Copy, Debug)]
pub struct MlpField<'a>(pub &'a Mlp);

impl Dynamics for MlpField<'_> {
    fn eval(&self, t: f64, z: &Array) -> Result<Array> {
        self.0.forward(z, t)
    }
}

/// An [`Mlp`] registered on a tape, used as a recorded vector field.
#[derive(Clone, Copy, Debug)]
pub struct TracedMlpField<'a> {
    pub net: &'a Mlp,
    pub vars: &'a MlpVars,
}

impl TracedDynamics for TracedMlpField<'_> {
    fn eval_traced(&self, tape: &mut Tape, t: f64, z: Var) -> Result<Var> {
        self.net.forward_traced(tape, self.vars, z, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Dopri5,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Dopri5 => "dopri5",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "dopri5" => Ok(Method::Dopri5),
            other => Err(Error::Config(format!(
                "unknown solver method {other:?} (expected rk4 or dopri5)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; `None` tries the whole interval.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    /// Step count of the fixed-step method.
    pub fixed_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            rtol: 1e-5,
            atol: 1e-7,
            initial_step: None,
            max_steps: 10_000,
            fixed_steps: 100,
        }
    }
}

impl SolverConfig {
    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn rk4(steps: usize) -> Self {
        Self {
            method: Method::Rk4,
            fixed_steps: steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::Config(format!(
                "rtol and atol must be positive (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        if self.max_steps < 1 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.method == Method::Rk4 && self.fixed_steps < 1 {
            return Err(Error::Config("rk4 needs at least one step".into()));
        }
        if let Some(h) = self.initial_step {
            if !(h > 0.0) {
                return Err(Error::Config(format!("initial_step = {h} must be positive")));
            }
        }
        Ok(())
    }
}

/// One accepted step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub t_start: f64,
    pub t_end: f64,
    /// Scaled error norm (≤ 1 for accepted adaptive steps, 0 for fixed steps).
    pub error_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub final_state: Array,
    /// State after every accepted step, starting with the initial state.
    pub trajectory: Vec<(f64, Array)>,
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub steps: Vec<Step>,
}

impl SolveResult {
    /// The accepted step boundaries, reusable as a frozen schedule.
    pub fn schedule(&self) -> Vec<(f64, f64)> {
        self.steps.iter().map(|s| (s.t_start, s.t_end)).collect()
    }

    /// State at `t` by linear interpolation between accepted steps
    /// (first-order accurate between step boundaries).
    pub fn sample_at(&self, t: f64) -> Result<Array> {
        let traj = &self.trajectory;
        let (first, last) = (traj[0].0, traj[traj.len() - 1].0);
        let (lo, hi) = if first <= last { (first, last) } else { (last, first) };
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if t < lo - slack || t > hi + slack {
            return Err(Error::Range(format!("t = {t} outside solved span [{lo}, {hi}]")));
        }
        if traj.len() == 1 {
            return Ok(traj[0].1.clone());
        }
        let forward = last >= first;
        let idx = traj
            .windows(2)
            .position(|w| {
                if forward {
                    t <= w[1].0
                } else {
                    t >= w[1].0
                }
            })
            .unwrap_or(traj.len() - 2);
        let (ta, za) = &traj[idx];
        let (tb, zb) = &traj[idx + 1];
        let w = if tb == ta { 0.0 } else { (t - ta) / (tb - ta) };
        za.zip_map(zb, |a, b| a + w * (b - a))
    }
}

/// Output of a recorded solve: the plain summary plus the tape handle of the
/// final state.
#[derive(Clone, Debug)]
pub struct TracedSolve {
    pub result: SolveResult,
    pub final_var: Var,
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-facing configuration (bad shapes, out-of-range hyperparameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },

    #[error("solver diverged at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },

    #[error("step limit of {max_steps} exceeded at t = {t} with step size {h}")]
    StepLimit { max_steps: usize, t: f64, h: f64 },

    #[error("step size underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("sampled end time {t_end} does not exceed start time {t0}")]
    DegenerateSample { t_end: f64, t0: f64 },

    #[error("range error: {0}")]
    Range(String),

    #[error("singular coefficient: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures raised by the integrator (divergence, stiffness blow-up).
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::StepLimit { .. }
                | Error::StepUnderflow { .. }
                | Error::NonFinite { .. }
        )
    }
}

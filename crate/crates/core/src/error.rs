use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A requested size exceeds a configured cap (sites, modes, memory).
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    /// A support or translate does not fit in the working box.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Arguments violate a documented precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// The propagator drifted away from unitarity beyond repair.
    #[error("integrator failure: {0}")]
    Integrator(String),

    /// Picard iteration for the self-consistency equation did not reach tolerance.
    #[error("self-consistency did not converge after {iterations} iterations on [{start}, {end}] (defect {defect:e})")]
    NonConvergence {
        iterations: usize,
        defect: f64,
        start: f64,
        end: f64,
    },

    /// Configuration error tied to a named field.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

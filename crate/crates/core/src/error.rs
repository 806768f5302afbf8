use crate::geometry::GeometrySolution;

/// Error type shared by all modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A physical parameter violated its domain constraint.
    #[error("{name} must be {constraint}, got {value}")]
    Domain {
        name: &'static str,
        constraint: &'static str,
        value: f64,
    },

    /// Configuration file problem, with the offending key path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Integer ambiguity could not be resolved from the given ranging box.
    #[error("integer ambiguity: {0}; repeat with coarser ranging first")]
    Ambiguity(String),

    /// The integer search would exceed the candidate bound.
    #[error("integer search bound exceeded: {0}; repeat with coarser ranging first")]
    SearchBound(String),

    /// The least-squares solver stopped without meeting its tolerances.
    #[error("solver did not converge after {iterations} iterations (residual norm {residual_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
        best: Box<GeometrySolution>,
    },

    /// A trial batch was paired with a model it was not produced from.
    #[error("trial batch does not match model: {0}")]
    ModelMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

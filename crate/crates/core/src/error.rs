use thiserror::Error;

/// Convergence summary attached to linear-solver failures.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub solver: &'static str,
    pub iterations: usize,
    pub residual: f64,
    pub tolerance: f64,
}

impl std::fmt::Display for SolverReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} stopped after {} iterations with residual {:.3e} (tolerance {:.3e})",
            self.solver, self.iterations, self.residual, self.tolerance
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("linear solver failed: {0}")]
    LinearSolver(SolverReport),

    #[error("non-finite value detected at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("solver failed at step {step} (t = {time}): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("run with viscosity {viscosity} failed: {source}")]
    Parameter {
        viscosity: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("Newton iteration did not converge in {} iterations (last residual {:.3e})", .residuals.len(), .residuals.last().copied().unwrap_or(f64::NAN))]
    Newton { residuals: Vec<f64> },

    #[error("requested {requested} modes but the snapshot set has numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("degenerate supremizer set: every supremizer is zero")]
    DegenerateSupremizers,

    #[error("singular reduced matrix: {0}")]
    Singular(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

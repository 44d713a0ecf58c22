use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A spectrum is too broad for the narrowband conversions to hold.
    #[error("narrowband assumption violated: bandwidth/center ratio {ratio:.3} >= 0.1")]
    Narrowband { ratio: f64 },

    /// A closed-form expression diverges for the given parameters.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Internal consistency check failed; indicates a bug, not bad input.
    #[error("internal consistency violated: {0}")]
    Consistency(String),

    /// Requested (visibility, width) pair is not reachable.
    #[error("no solution: {message}; {frontier}")]
    NoSolution { message: String, frontier: String },

    /// Quadrature did not settle under order doubling.
    #[error("quadrature not converged: relative change {relative_change:.3e} at order {order}")]
    Convergence { order: usize, relative_change: f64 },

    /// A sampled curve does not span the range needed for an operation.
    #[error("insufficient coverage: {0}")]
    Coverage(String),

    /// Least-squares fit failed.
    #[error("fit failed: {message} (residual rms {residual_rms:.3e})")]
    Fit { message: String, residual_rms: f64 },

    /// Not enough data for a meaningful estimate.
    #[error("statistics error: {0}")]
    Statistics(String),

    /// Inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Control loop fails the linearized stability check.
    #[error("unstable loop: phase margin {phase_margin_deg:.1} deg < 10 deg")]
    Stability { phase_margin_deg: f64 },

    /// Lock or handover was never reached.
    #[error("timeout: {0}")]
    Timeout(String),

    /// Unknown selector (scenario kind, subcommand argument, ...).
    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    /// True when the error is caused by invalid user input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Narrowband { .. }
                | Error::NoSolution { .. }
                | Error::Coverage(_)
                | Error::Statistics(_)
                | Error::Config(_)
                | Error::Usage(_)
        )
    }

    /// Short machine-readable tag.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Narrowband { .. } => "narrowband",
            Error::Divergence(_) => "divergence",
            Error::Consistency(_) => "consistency",
            Error::NoSolution { .. } => "no-solution",
            Error::Convergence { .. } => "convergence",
            Error::Coverage(_) => "coverage",
            Error::Fit { .. } => "fit",
            Error::Statistics(_) => "statistics",
            Error::Config(_) => "config",
            Error::Stability { .. } => "stability",
            Error::Timeout(_) => "timeout",
            Error::Usage(_) => "usage",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

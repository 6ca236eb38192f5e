use thiserror::Error;

/// Everything that can go wrong below the CLI layer.
///
/// Variants split into two families the caller may want to distinguish:
/// input problems (domain violations, inconsistent grids, assumption
/// failures) and numerical breakdowns (brackets that never close, power
/// iterations that stall). The CLI maps the former to exit code 1 and the
/// latter to exit code 2.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} = {value} lies outside [{lo}, {hi}]")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("model assumption ({assumption}) violated: {detail}")]
    AssumptionViolated {
        assumption: &'static str,
        detail: String,
    },

    #[error("inconsistent inputs: {0}")]
    Mismatch(String),

    #[error("no sign change for {what} within [{lo:.6e}, {hi:.6e}] after {expansions} bracket expansions")]
    BracketNotFound {
        what: &'static str,
        lo: f64,
        hi: f64,
        expansions: u32,
    },

    #[error("root finder for {what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    RootNotConverged {
        what: &'static str,
        iterations: u32,
        residual: f64,
    },

    #[error("power iteration stalled after {iterations} iterations (residual {residual:.3e})")]
    PowerIterationStalled { iterations: u32, residual: f64 },

    #[error("spectral problem is degenerate: {0}")]
    Degenerate(String),

    #[error("norm became non-finite at t = {t}; growth overflowed the floating-point range")]
    Overflow { t: f64 },

    #[error("population norm vanished inside the requested window at t = {t}; the colony has died out")]
    Extinct { t: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of iterative numerics (as opposed to bad inputs).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::BracketNotFound { .. }
                | Error::RootNotConverged { .. }
                | Error::PowerIterationStalled { .. }
                | Error::Degenerate(_)
                | Error::Overflow { .. }
                | Error::Extinct { .. }
        )
    }
}

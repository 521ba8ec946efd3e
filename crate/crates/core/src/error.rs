/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by scene validation and the numerical pipeline.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// A parameter or configuration value violates its documented domain.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A supplied crosstalk matrix is not unitary within tolerance.
    #[error("crosstalk matrix is not unitary (max |c†c - I| = {defect:.3e})")]
    NonUnitaryCrosstalk { defect: f64 },

    /// The requested mean off-diagonal power cannot be reached by any
    /// unitary of the given dimension.
    #[error("crosstalk power target {target:.3e} is infeasible for K = {k} (must be < 1/K)")]
    InfeasibleCrosstalkPower { target: f64, k: usize },

    /// Calibration of the crosstalk generator failed to reach the target power.
    #[error("crosstalk calibration failed: reached {achieved:.3e} for target {target:.3e}")]
    CrosstalkCalibration { target: f64, achieved: f64 },

    /// The covariance matrix restricted to live modes is numerically singular.
    /// Modes are reported by flat basis index.
    #[error(
        "degenerate scenario: covariance condition estimate {condition:.3e} exceeds 1e12 \
         (worst-conditioned mode indices: {modes:?})"
    )]
    DegenerateScenario { condition: f64, modes: Vec<usize> },

    /// A calibration curve is unusable for inversion.
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    /// The adaptive quadrature oracle did not converge to the requested accuracy.
    #[error(
        "quadrature did not converge: error estimate {achieved:.3e} > requested {requested:.3e}"
    )]
    QuadratureNoConvergence { achieved: f64, requested: f64 },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

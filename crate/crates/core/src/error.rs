use thiserror::Error;

/// Errors raised by the accountants, the calibration loop and the oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccountingError {
    #[error("invalid mechanism parameters: {0}")]
    InvalidMechanism(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("log-ratio {x} is outside the support (lower bound {lower})")]
    Domain { x: f64, lower: f64 },

    #[error("quadrature for moment order {order} did not stabilise within {max_nodes} nodes")]
    QuadratureFailure { order: usize, max_nodes: usize },

    #[error("degenerate distribution: variance {variance} is not positive")]
    DegenerateDistribution { variance: f64 },

    #[error("no finite epsilon reaches delta={delta} below epsilon={cap}")]
    NoFiniteEpsilon { delta: f64, cap: f64 },

    #[error(
        "epsilon target {target} unreachable: epsilon at the starting noise multiplier {sigma_start} is {epsilon_at_start}"
    )]
    TargetUnreachable { target: f64, sigma_start: f64, epsilon_at_start: f64 },

    #[error("RDP order {alpha} overflows the representable range")]
    OrderTooLarge { alpha: u32 },

    #[error("discretisation bounds too tight: truncated mass {truncated_mass:e}")]
    BoundsTooTight { truncated_mass: f64 },

    #[error("FFT composition wrapped around: {edge_mass:e} mass near the domain edge")]
    WraparoundDetected { edge_mass: f64 },

    #[error("delta={delta} is below the Monte Carlo resolution {resolution:e}")]
    IntervalUnresolvable { delta: f64, resolution: f64 },
}

pub type Result<T> = std::result::Result<T, AccountingError>;

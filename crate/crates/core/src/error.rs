use thiserror::Error;

/// Errors raised by the airspace model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("degenerate interval [{lower}, {upper}]")]
    DegenerateInterval { lower: f64, upper: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("density has {pieces} pieces, above the cap of {cap}; discretization required")]
    DiscretizationRequired { pieces: usize, cap: usize },

    #[error("negative density {value:e} at t = {at}")]
    NegativeDensity { value: f64, at: f64 },

    #[error("density integrates to {total}, expected 1")]
    NotNormalized { total: f64 },

    #[error("invalid grid step {0}")]
    InvalidGridStep(f64),

    #[error("invalid flight plan {flight}: {reason}")]
    InvalidPlan { flight: String, reason: String },

    #[error("shift on edge {edge} of flight {flight} moves its mean to {mean}, outside [{lower}, {upper}]")]
    ShiftOutOfBounds {
        flight: String,
        edge: String,
        mean: f64,
        lower: f64,
        upper: f64,
    },

    #[error("unknown flight {0}")]
    UnknownFlight(String),

    #[error("point {point} is not on the active route of flight {flight}")]
    PointNotOnRoute { flight: String, point: String },

    #[error("observation of {point} at {time} for flight {flight} lies outside the plausibility window [{lo}, {hi}]")]
    ImplausibleObservation {
        flight: String,
        point: String,
        time: f64,
        lo: f64,
        hi: f64,
    },

    #[error("flight {flight} has no route {index}")]
    InvalidRoute { flight: String, index: usize },

    #[error("event at {timestamp} precedes the last processed event at {last}")]
    OutOfOrderEvent { timestamp: f64, last: f64 },

    #[error("malformed event: {0}")]
    MalformedEvent(String),

    #[error("invalid sector {sector}: {reason}")]
    InvalidSector { sector: String, reason: String },

    #[error("invalid time slice [{t0}, {t1}]")]
    InvalidSlice { t0: f64, t1: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch: {0} expected arrivals vs {1} scheduled")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, ModelError>;

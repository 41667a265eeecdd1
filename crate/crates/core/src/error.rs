use thiserror::Error;

use crate::allocate::ComparisonReport;
use crate::epimodel::Compartments;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} lies outside every coefficient segment")]
    OutOfRange { t: f64 },

    #[error("compartment {component} is negative ({value:e}) at t={t}")]
    NegativeState {
        component: &'static str,
        value: f64,
        t: f64,
    },

    #[error("integration produced a non-finite state on day {day}")]
    IntegrationBlowup { day: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state is not a fixed point (residual {residual:e})")]
    NotFixedPoint { residual: f64 },

    #[error("no convergence within {horizon} days")]
    NotConverged {
        horizon: u32,
        last: Box<Compartments>,
    },

    #[error("observation set is empty")]
    EmptyObservations,

    #[error("population of {size} chromosomes is too small (need at least 4)")]
    PopulationTooSmall { size: usize },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("segment {index}: {source}")]
    Segment {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("gain at day {day}, location {location}: {source}")]
    Gain {
        day: u32,
        location: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("campaign stopped on day {day}: {source}")]
    Campaign {
        day: u32,
        #[source]
        source: Box<Error>,
        /// Totals accumulated before the failure.
        partial: Box<ComparisonReport>,
    },

    #[error("day {day}: {demand} second doses are due but only {available} vaccines are available (short by {})", demand - available)]
    SecondDoseShortfall { day: u32, demand: u64, available: u64 },

    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NegativeState { .. }
            | Error::IntegrationBlowup { .. }
            | Error::NotConverged { .. }
            | Error::NotFixedPoint { .. }
            | Error::EstimationFailed(_) => true,
            Error::Segment { source, .. }
            | Error::Gain { source, .. }
            | Error::Campaign { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

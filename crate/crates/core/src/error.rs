use thiserror::Error;

use crate::model::{ConstellationId, LinkKey};
use crate::solver::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("position is within {0:.0} m of the geocenter")]
    NearGeocenter(f64),
    #[error("satellite coincides with the receiver position")]
    ZeroRange,
    #[error("no clock bias for constellation {0}")]
    MissingClockBias(ConstellationId),
    #[error("not enough measurements: have {have}, need {need}")]
    NotEnoughMeasurements { have: usize, need: usize },
    #[error("singular geometry: normal matrix condition number {0:.3e}")]
    SingularGeometry(f64),
    #[error("solver did not converge after {} iterations", .0.iterations)]
    NonConvergence(Box<SolveReport>),
    #[error("epoch time {got} s precedes previous time {previous} s")]
    NonMonotonicTime { previous: f64, got: f64 },
    #[error("epoch has no ground truth")]
    MissingTruth,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
    #[error("elevation {elevation_deg:.2} deg is at or below the {mask_deg:.2} deg mask")]
    HorizonSingularity { elevation_deg: f64, mask_deg: f64 },
    #[error("empty sample set")]
    EmptySamples,
    #[error("invalid measurement {key}: {reason}")]
    InvalidMeasurement { key: LinkKey, reason: String },
    #[error("duplicate measurement {0} within one epoch")]
    DuplicateMeasurement(LinkKey),
    #[error("invalid epoch: {0}")]
    InvalidEpoch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model `{0}` is required but was not provided")]
    MissingModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}


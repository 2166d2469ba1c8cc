use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("bearing is undefined between identical points")]
    DegenerateBearing,

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("malformed polyline at byte {position}: {reason}")]
    MalformedPolyline { position: usize, reason: &'static str },

    #[error("region of {width:.4}x{height:.4} degrees exceeds the {cap} degree query cap")]
    RegionTooLarge { width: f64, height: f64, cap: f64 },

    #[error("{service} request failed after {attempts} attempt(s): {message}")]
    Provider {
        service: &'static str,
        message: String,
        attempts: u32,
        retryable: bool,
    },

    #[error("{service} quota exhausted ({used} of {cap} requests)")]
    QuotaExhausted {
        service: &'static str,
        used: u64,
        cap: u64,
    },

    #[error("{0} waypoints requested, at most 23 are allowed")]
    TooManyWaypoints(usize),

    #[error("at least 2 sites are needed to plan routes, got {0}")]
    NotEnoughSites(usize),

    #[error("at least 2 points are needed, got {0}")]
    NotEnoughPoints(usize),

    #[error("no heading can be derived: all locations coincide")]
    NoHeadingsDerivable,

    #[error("override references unknown sample `{0}`")]
    UnknownSample(String),

    #[error("unsupported manifest format version {0}")]
    UnsupportedVersion(u64),

    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),

    #[error("cannot split by region: {0} distinct region(s), need at least 2")]
    CannotSplit(usize),

    #[error("need {needed} negatives but only {available} available (shortfall {shortfall})")]
    InsufficientNegatives {
        needed: usize,
        available: usize,
        shortfall: usize,
    },

    #[error("predictions do not match ground truth: {0}")]
    MismatchedPredictions(String),

    #[error("nothing to evaluate")]
    EmptyEvaluation,

    #[error("sequence `{sequence}` has no prediction for frame {frame}")]
    IncompleteSequence { sequence: String, frame: u64 },

    #[error("bad image: {0}")]
    BadImage(String),

    #[error("training split must contain both classes ({positives} positive, {negatives} negative)")]
    DegenerateTrainingSet { positives: usize, negatives: usize },

    #[error("bad model file: {0}")]
    BadModel(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("output {0} is locked by another writer")]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

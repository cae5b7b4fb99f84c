use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("unknown edge `{0}`")]
    UnknownEdge(String),

    #[error("edges `{0}` and `{1}` are not composable (head of the first is not the tail of the second)")]
    NotComposable(String, String),

    #[error("no consistent order grading: cycle through `{edge}` has q-product {product}")]
    NonUnimodular { edge: String, product: String },

    #[error("no closed non-backtracking path with positive multiplicity")]
    NoClosedGeodesic,

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("tail resummation diverges: effective spectral radius stays below 1 down to the tail critical value {s_tail}")]
    Diverges { s_tail: f64 },

    #[error("no positive solution: {0}")]
    NoPositiveSolution(String),

    #[error("forward and backward critical exponents differ: {plus} vs {minus}")]
    DeltaMismatch { plus: f64, minus: f64 },

    #[error("edge `{0}` has zero shadow but is not a funnel or dead-end edge")]
    ZeroShadow(String),

    #[error("chain is reducible on its support")]
    Reducible,

    #[error("difference to stationarity is already zero")]
    AlreadyExact,

    #[error("not enough usable points for a fit: {0}")]
    InsufficientData(String),

    #[error("inadmissible word: {0}")]
    InvalidWord(String),

    #[error("invalid probabilities: {0}")]
    InvalidProbabilities(String),

    #[error("periodic recurrence admits no geometric drift with ratio below 1")]
    NoGeometricDrift,

    #[error("ray is not cuspidal: {0}")]
    NonCuspidal(String),

    #[error("paths do not end at a common vertex")]
    PathMismatch,

    #[error("integer overflow in exact arithmetic")]
    Overflow,

    #[error("numerical procedure did not converge: {0}")]
    NotConverged(String),

    #[error("undefined weight on reachable state `{0}`")]
    UndefinedWeight(String),

    #[error("normalization records do not match: {0}")]
    NormalizationMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),
}

/// Classes of failure, mapped to process exit codes by the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Resource,
    Io,
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config { .. } | InvalidGraph(_) | UnknownVertex(_) | UnknownEdge(_)
            | NotComposable(..) | NonUnimodular { .. } | NoClosedGeodesic | InvalidWord(_)
            | InvalidProbabilities(_) | NonCuspidal(_) | PathMismatch | UndefinedWeight(_)
            | NormalizationMismatch(_) | Reducible => ErrorClass::Config,
            ResourceLimit(_) | Overflow => ErrorClass::Resource,
            Io(_) => ErrorClass::Io,
            Diverges { .. } | NoPositiveSolution(_) | DeltaMismatch { .. } | ZeroShadow(_)
            | AlreadyExact | InsufficientData(_) | NoGeometricDrift | NotConverged(_) => {
                ErrorClass::Numeric
            }
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Numeric => 3,
            ErrorClass::Resource => 4,
            ErrorClass::Io => 1,
        }
    }
}

use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("covector is zero; dual metrics are only continuous there")]
    ZeroCovector,
    #[error("invalid splice: {0}")]
    InvalidSplice(String),
    #[error("invalid cutoff band: {0}")]
    InvalidBand(String),
    #[error("fiber convexity lost at alpha = {alpha} (min Hessian eigenvalue {min_eigenvalue:e})")]
    ConvexityLost { alpha: f64, min_eigenvalue: f64 },
    #[error("reversibilization seam mismatch {mismatch:e} at xi = ({xi1}, {xi2})")]
    SeamMismatch { mismatch: f64, xi1: f64, xi2: f64 },
    #[error("profile does not agree with f0 on the required interval: {0}")]
    ProfileMismatch(String),
    #[error("orbit approached the pole: |x2| = {x2} at t = {t}")]
    PoleProximity { t: f64, x2: f64 },
    #[error("invariant drift {drift:e} exceeds tolerance {tol:e} at t = {t}")]
    InvariantDrift { t: f64, drift: f64, tol: f64 },
    #[error("integrator failure: {0}")]
    StepFailure(String),
    #[error("orbit left the cone U_a0 at t = {t}")]
    ConeViolation { t: f64 },
    #[error("lift ambiguity at sample {index}: step exceeds half a period")]
    LiftAmbiguity { index: usize },
    #[error("no transverse crossing within {max_time}")]
    NoCrossing { max_time: f64 },
    #[error("crossing is not transverse (normal speed {normal_speed:e})")]
    NonTransverse { normal_speed: f64 },
    #[error("function does not vanish at t = 0 (value {value:e})")]
    NotVanishing { value: f64 },
    #[error("boundary extrapolation unstable: {0}")]
    ExtrapolationUnstable(String),
    #[error("map failed at iterate {iterate}: {source}")]
    MapFailure {
        iterate: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("asymptotic direction not converged (residual {residual:e} > {tol:e})")]
    NotConverged { residual: f64, tol: f64 },
    #[error("point cloud too small: {0}")]
    InsufficientCloud(String),
    #[error("empty sample set")]
    EmptySample,
    #[error("empty input")]
    EmptyInput,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid config at `{path}`: {message}")]
    ConfigInvalid { path: String, message: String },
    #[error("unknown export format `{0}`")]
    UnknownFormat(String),
    #[error("i/o failure: {0}")]
    IoFailure(String),
}

impl Error {
    /// Stable short name, used in status columns.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroCovector => "zero-covector",
            Error::InvalidSplice(_) => "invalid-splice",
            Error::InvalidBand(_) => "invalid-band",
            Error::ConvexityLost { .. } => "convexity-lost",
            Error::SeamMismatch { .. } => "seam-mismatch",
            Error::ProfileMismatch(_) => "profile-mismatch",
            Error::PoleProximity { .. } => "pole-proximity",
            Error::InvariantDrift { .. } => "invariant-drift",
            Error::StepFailure(_) => "step-failure",
            Error::ConeViolation { .. } => "cone-violation",
            Error::LiftAmbiguity { .. } => "lift-ambiguity",
            Error::NoCrossing { .. } => "no-crossing",
            Error::NonTransverse { .. } => "non-transverse",
            Error::NotVanishing { .. } => "not-vanishing",
            Error::ExtrapolationUnstable(_) => "extrapolation-unstable",
            Error::MapFailure { .. } => "map-failure",
            Error::NotConverged { .. } => "not-converged",
            Error::InsufficientCloud(_) => "insufficient-cloud",
            Error::EmptySample => "empty-sample",
            Error::EmptyInput => "empty-input",
            Error::UnknownScenario(_) => "unknown-scenario",
            Error::ConfigInvalid { .. } => "config-invalid",
            Error::UnknownFormat(_) => "unknown-format",
            Error::IoFailure(_) => "io-failure",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::IoFailure(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

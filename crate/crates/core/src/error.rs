use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} training points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("kernel matrix is singular even with nugget {nugget:e}")]
    EmulatorSingular { nugget: f64 },
    #[error("predictive variance {value:e} is negative beyond tolerance")]
    NegativeVariance { value: f64 },
    #[error("non-finite training output at index {0}")]
    NonFiniteOutput(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PosteriorError {
    #[error("covariance matrix is not positive definite")]
    CovarianceSingular,
    #[error("determinant of the post-acquisition covariance is not positive")]
    NonPositiveDeterminant,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid field experiment: {0}")]
    InvalidField(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquisitionError {
    #[error("no finite acquisition score among {0} candidates")]
    AcquisitionFailed(usize),
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("reference set `{0}` is empty")]
    MissingReference(&'static str),
    #[error("acquisition needs a parameter estimate")]
    MissingThetaHat,
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulator did not answer within {0:?}")]
    SimTimeout(std::time::Duration),
    #[error("protocol error: {0}")]
    SimProtocol(String),
    #[error("simulator exited (status {0:?})")]
    SimCrashed(Option<i32>),
    #[error("could not launch simulator: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("i/o error talking to simulator: {0}")]
    Io(#[source] std::io::Error),
    #[error("invalid simulator input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid design configuration: {0}")]
    Config(String),
    #[error("simulator failed: {0}")]
    Simulator(#[from] SimError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
}

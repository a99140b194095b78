use thiserror::Error;

use crate::data::Group;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    // ingestion
    #[error("missing or misnamed column: expected header `y,x,z,g`, found `{0}`")]
    MissingColumn(String),
    #[error("non-numeric or non-finite cell at row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("unknown group tag at row {0} (expected `E` or `O`)")]
    UnknownGroupTag(usize),
    #[error("group {0} has no records")]
    EmptyGroup(Group),
    #[error("i/o error: {0}")]
    Io(String),

    // estimation
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("weak first stage: |corr(X, Z)| = {0:e} in the observational block")]
    WeakFirstStage(f64),
    #[error("degenerate covariate: Var(Z) is zero in the observational block")]
    DegenerateZ,
    #[error("non-positive variance input: {0}")]
    NonpositiveVariance(String),
    #[error("singular weighting matrix: {0}")]
    SingularWeighting(String),
    #[error("too few observations: need at least {need}, have {have}")]
    TooFewObservations { need: usize, have: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("leave-one-out fold {0} is degenerate")]
    DegenerateFold(usize),
    #[error("outcome is not binary at row {0}")]
    NonBinaryOutcome(usize),
    #[error("optimizer did not converge after {iterations} iterations (best objective {best})")]
    NonConvergence { iterations: usize, best: f64 },

    // simulation / configuration
    #[error("covariance of (Z, U, V) is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("estimator `{estimator}` failed in {failures} of {replications} replications")]
    TooManyFailures {
        estimator: String,
        failures: usize,
        replications: usize,
    },
}

impl FusionError {
    /// Variant name, for one-line diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            FusionError::MissingColumn(_) => "MissingColumn",
            FusionError::NonNumericCell { .. } => "NonNumericCell",
            FusionError::UnknownGroupTag(_) => "UnknownGroupTag",
            FusionError::EmptyGroup(_) => "EmptyGroup",
            FusionError::Io(_) => "Io",
            FusionError::SingularDesign(_) => "SingularDesign",
            FusionError::WeakFirstStage(_) => "WeakFirstStage",
            FusionError::DegenerateZ => "DegenerateZ",
            FusionError::NonpositiveVariance(_) => "NonpositiveVariance",
            FusionError::SingularWeighting(_) => "SingularWeighting",
            FusionError::TooFewObservations { .. } => "TooFewObservations",
            FusionError::InvalidHyperparameter(_) => "InvalidHyperparameter",
            FusionError::DegenerateFold(_) => "DegenerateFold",
            FusionError::NonBinaryOutcome(_) => "NonBinaryOutcome",
            FusionError::NonConvergence { .. } => "NonConvergence",
            FusionError::NotPositiveSemidefinite => "NotPositiveSemidefinite",
            FusionError::InfeasibleDesign(_) => "InfeasibleDesign",
            FusionError::InvalidConfig(_) => "InvalidConfig",
            FusionError::TooManyFailures { .. } => "TooManyFailures",
        }
    }

    /// Data/validation problems as opposed to failures of the method itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            FusionError::MissingColumn(_)
                | FusionError::NonNumericCell { .. }
                | FusionError::UnknownGroupTag(_)
                | FusionError::EmptyGroup(_)
                | FusionError::Io(_)
                | FusionError::NonBinaryOutcome(_)
                | FusionError::InvalidConfig(_)
                | FusionError::InvalidHyperparameter(_)
                | FusionError::NotPositiveSemidefinite
                | FusionError::InfeasibleDesign(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FusionError>;

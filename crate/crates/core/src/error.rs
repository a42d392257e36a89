use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("missing cell: {0}")]
    MissingCell(String),
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("duplicate row: {0}")]
    DuplicateRow(String),
    #[error("feature `{0}` has no finite values")]
    EmptyFeature(String),
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("unknown scenario dimension={dimension} budget={budget}")]
    UnknownScenario { dimension: u32, budget: u64 },
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("feature table does not match performance data: {0}")]
    FeatureMismatch(String),

    #[error("expected {expected} outer splits, found {found}")]
    MissingSplit { expected: usize, found: usize },

    #[error("training set is empty")]
    EmptyTraining,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("invalid cross-validation plan: {0}")]
    InvalidPlan(String),

    #[error("cover bookkeeping violated at node {0}")]
    CoverViolation(usize),

    #[error("meta-representations have mixed kinds, scenarios or problems")]
    MixedKinds,
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),

    #[error("not enough algorithms: need {need}, have {have}")]
    NotEnoughAlgorithms { need: usize, have: usize },
    #[error("missing local meta-representation for problem `{0}`")]
    MissingLocalRep(String),
    #[error("sample size {size} exceeds population {population}")]
    SizeTooLarge { size: usize, population: usize },

    #[error("missing model for algorithm `{algorithm}` on instance {problem}/{instance}")]
    MissingModel {
        algorithm: String,
        problem: String,
        instance: String,
    },
    #[error("missing feature row for dimension {dimension}, {problem}/{instance}")]
    MissingFeatures {
        dimension: u32,
        problem: String,
        instance: String,
    },
    #[error("non-finite precision in loss: {0}")]
    NonFinite(f64),
    #[error("reports do not share one scenario")]
    ScenarioMismatch,
    #[error("comparison needs a FULL portfolio report")]
    MissingFullReport,
    #[error("empty portfolio")]
    EmptyPortfolio,

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Whether the error stems from invalid input data or configuration.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Schema(_)
                | Error::MissingCell(_)
                | Error::NonFiniteValue(_)
                | Error::DuplicateRow(_)
                | Error::EmptyFeature(_)
                | Error::FeatureMismatch(_)
                | Error::UnknownAlgorithm(_)
                | Error::UnknownScenario { .. }
                | Error::UnknownProblem(_)
                | Error::InvalidHyperParams(_)
                | Error::InvalidPlan(_)
                | Error::InvalidSpec(_)
                | Error::InvalidConfig(_)
                | Error::Csv(_)
        )
    }
}

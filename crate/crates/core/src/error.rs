//! Error type shared by every stage of the estimator.

use thiserror::Error;

pub type Result<T, E = SpvimError> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Sampling,
    Solver,
    Runner,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Sampling => 4,
            ErrorClass::Solver => 5,
            ErrorClass::Runner => 6,
        }
    }
}

#[derive(Debug, Error)]
pub enum SpvimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("exact Shapley enumeration is capped at p = {cap}, got p = {p}")]
    Capacity { p: usize, cap: usize },

    #[error("degenerate outcome: {0}")]
    DegenerateOutcome(String),

    #[error("fold {fold} is degenerate: {reason}")]
    DegenerateFold { fold: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("could not reach {needed} unique subsets after {draws} draws; increase gamma or the sample size")]
    SamplingBudget { needed: usize, draws: usize },

    #[error("only {unique} unique subsets for {p} features; at least p + 1 are required")]
    UnderIdentified { unique: usize, p: usize },

    #[error("KKT system is ill-posed (condition number {condition:.3e}); sample more subsets (raise gamma)")]
    IllPosed { condition: f64 },

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("test denominator is zero for feature {feature}; consider the AUC measure or a larger second split")]
    DegenerateVariance { feature: usize },

    #[error("invalid feature partition: {0}")]
    Partition(String),

    #[error("subpopulation too small: {0}")]
    SubpopulationSize(String),

    #[error("{failed} of {total} replicates failed, over the failure budget; first: {first}")]
    FailureBudget { failed: usize, total: usize, first: String },

    #[error("model runner: {0}")]
    Runner(String),

    #[error("model runner protocol violation: {message} (frame: {frame})")]
    RunnerProtocol { message: String, frame: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<SpvimError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl SpvimError {
    pub fn class(&self) -> ErrorClass {
        use SpvimError::*;
        match self {
            InvalidArgument(_) | Config(_) | Capacity { .. } | Partition(_) | Toml(_) => ErrorClass::Config,
            DegenerateOutcome(_)
            | DegenerateFold { .. }
            | Data(_)
            | SubpopulationSize(_)
            | Io(_)
            | Csv(_)
            | Json(_) => ErrorClass::Data,
            SamplingBudget { .. } => ErrorClass::Sampling,
            UnderIdentified { .. }
            | IllPosed { .. }
            | IllConditioned(_)
            | Infeasible(_)
            | DegenerateVariance { .. }
            | FailureBudget { .. } => ErrorClass::Solver,
            Runner(_) | RunnerProtocol { .. } => ErrorClass::Runner,
            Stage { source, .. } => source.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }

    /// Wraps the error with the pipeline stage (and anything else) it came from.
    pub fn at(self, stage: impl Into<String>) -> Self {
        SpvimError::Stage { stage: stage.into(), source: Box::new(self) }
    }

    /// Innermost error, skipping stage annotations.
    pub fn root(&self) -> &SpvimError {
        match self {
            SpvimError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn at(self, stage: impl Into<String>) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn at(self, stage: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}

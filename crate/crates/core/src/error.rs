use thiserror::Error;

/// Invalid configuration: grid, taxonomy, or training hyperparameters.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("grid size {0} out of range 1..=8")]
    GridSize(u32),
    #[error("taxonomy line {line}: {message}")]
    TaxonomyLine { line: usize, message: String },
    #[error("type '{0}' is not a canonical taxonomy type")]
    UnknownType(String),
    #[error("fuzzy threshold {0} must be in (0, 1]")]
    FuzzyThreshold(f64),
    #[error("invalid training config: {0}")]
    Train(String),
    #[error("invalid ground truth: {0}")]
    GroundTruth(String),
}

/// Violations of the reward functions' calling contract.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("location/type rewards are only defined for anomalous samples")]
    NotAnomalous,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Errors from the policy optimization routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("state {state} out of range ({num_states} states)")]
    InvalidState { state: usize, num_states: usize },
    #[error("action {action} out of range for state {state}")]
    InvalidAction { state: usize, action: usize },
    #[error("group size {0} must be at least 2")]
    GroupSize(usize),
    #[error("policies disagree on the shape of state {0}")]
    ShapeMismatch(usize),
    #[error("reference probability is zero for state {state}, action {action}")]
    ZeroReference { state: usize, action: usize },
    #[error("no rollout groups")]
    NoGroups,
    #[error("token {0} is outside the vocabulary")]
    OutOfVocabulary(String),
    #[error("state {0} has no candidate actions")]
    EmptyActions(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

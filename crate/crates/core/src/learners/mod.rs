//! Meta-learners used by the simulated ensemble techniques, written from
//! scratch: feature preprocessing, multinomial logistic regression and a
//! random-forest regressor.

mod forest;
mod logreg;
mod preprocess;

pub use forest::{forest_fit, forest_predict, ForestConfig, ForestModel, RegressionTree};
pub use logreg::{logreg_fit, logreg_predict, objective, LogRegConfig, LogRegModel, TrainingMeta};
pub use preprocess::{preprocess, PreprocessedFeatures, MISSING_NUMERIC_FILL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnerError {
    #[error("feature width mismatch: model expects {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("invalid training data: {0}")]
    InvalidData(String),
}

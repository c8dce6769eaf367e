use comir::ComirError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, RegistrationError>;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("images do not overlap under the transform")]
    EmptyOverlap,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("too few keypoints: {found} found, {needed} needed")]
    TooFewKeypoints { found: usize, needed: usize },

    #[error("too few consensus inliers: {found} found, {needed} needed")]
    TooFewInliers { found: usize, needed: usize },

    #[error("invalid registration configuration: {0}")]
    Config(String),

    #[error("multistart needs at least one start")]
    NoStarts,

    #[error("every start failed; last error: {0}")]
    AllStartsFailed(Box<RegistrationError>),

    #[error(transparent)]
    Image(#[from] ComirError),
}

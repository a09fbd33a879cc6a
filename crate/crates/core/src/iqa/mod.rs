//! No-reference image quality: MSCN coefficients, PIQE and NIQE.

mod corpus;
mod mscn;
mod niqe;
mod piqe;

pub use corpus::{read_scores_csv, score_corpus, summarize, write_scores_csv, write_summary, GroupSummary, ScoreRow};
pub use mscn::{gaussian_window, mscn, Luma, MscnConfig, MscnField};
pub use niqe::{
    fit_niqe_model, ggd_fit, aggd_fit, niqe_distance, niqe_features, niqe_score, NiqeConfig, NiqeModel,
    NIQE_FEATURES_PER_SCALE,
};
pub use piqe::{piqe, BlockLabel, PiqeConfig, PiqeReport};

#[derive(Debug, thiserror::Error)]
pub enum IqaError {
    #[error("image {height}×{width} is smaller than the required {min}×{min}")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("invalid quality configuration: {0}")]
    Config(String),
    #[error("NIQE fitting needs at least {need} images, got {got}")]
    TooFewImages { need: usize, got: usize },
    #[error("NIQE corpus is degenerate: no patch produced finite features")]
    DegenerateCorpus,
    #[error("image produced no usable NIQE patch")]
    NoPatches,
    #[error("feature length {got} does not match the model's {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("pooled covariance is singular")]
    Singular,
    #[error("NIQE model file: {0}")]
    Model(String),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error("{path}: {message}")]
    Io { path: std::path::PathBuf, message: String },
}

use std::io;
use std::path::PathBuf;

use thiserror::Error;
use wordspot_core::{
    EvalError, FeatureError, FeedbackError, GenerationError, IndexError, IngestError, PcaError, RankError, RasterError,
};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}: {1}")]
    Path(PathBuf, #[source] io::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unknown word id {0}")]
    UnknownWord(u64),
    #[error("index has no PCA model; run pca-fit first")]
    NoModel,
    #[error("session file: {0}")]
    Session(String),
    #[error("{0}")]
    Usage(String),
}

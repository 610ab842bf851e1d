//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("mask has no foreground voxels")]
    EmptyMask,

    #[error("ventricle mask is empty")]
    EmptyVentricles,

    #[error("ground truth is empty; volume difference is undefined")]
    EmptyGroundTruth,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("only one class present in the labels")]
    DegenerateLabels,

    #[error("slices provide differing sample counts: {0}")]
    RaggedSamples(String),

    #[error("missing feature `{0}`")]
    MissingFeature(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable code, used as the reason attached to missing report cells.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::EmptyMask => "empty_mask",
            Error::EmptyVentricles => "empty_ventricles",
            Error::EmptyGroundTruth => "empty_ground_truth",
            Error::Domain(_) => "domain_error",
            Error::Degenerate(_) => "degenerate",
            Error::DegenerateLabels => "degenerate_labels",
            Error::RaggedSamples(_) => "ragged_samples",
            Error::MissingFeature(_) => "missing_feature",
            Error::Spec(_) => "spec_error",
            Error::Format(_) => "format_error",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
            Error::Csv(_) => "csv_error",
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can surface.
///
/// Each variant maps to a stable machine-readable [`Error::code`] so callers
/// driving the CLI programmatically can branch on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes, expected \"GSAL\"")]
    BadMagic,
    #[error("malformed tensor header: {0}")]
    BadHeader(String),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },

    #[error("manifest line {line}: {message}")]
    ManifestSyntax { line: usize, message: String },
    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),
    #[error("unknown class label {label:?} for image {image_id:?}")]
    UnknownClassLabel { image_id: String, label: String },
    #[error("missing field {field:?} (line {line})")]
    MissingField { line: usize, field: String },

    #[error("confidences for {image_id:?} sum to {sum}, expected 1")]
    BadConfidences { image_id: String, sum: f64 },
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("activation tensor is empty")]
    EmptyActivation,
    #[error("image id mismatch: {0:?} vs {1:?}")]
    IdMismatch(String, String),

    #[error("artefact mask for {0:?} is empty")]
    EmptyMask(String),
    #[error("percentile {0} outside (0, 100)")]
    BadPercentile(f64),
    #[error("pixel population has zero variance")]
    DegenerateDistribution,
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("too few points: {0}")]
    TooFewPoints(String),
    #[error("too few groups: need at least 2, got {0}")]
    TooFewGroups(usize),
    #[error("too few nonzero differences: need at least {min}, got {got}")]
    TooFewNonzeroDiffs { got: usize, min: usize },
    #[error("statistic undefined: {0}")]
    ZeroVariance(String),

    #[error("no mask for image {0:?}")]
    MissingMask(String),
    #[error("no prediction record for image {0:?}")]
    MissingPrediction(String),
    #[error("no {method} saliency source for image {image_id:?}")]
    MissingSaliency { image_id: String, method: String },
    #[error("class {class:?} has {available} uninked images, plan needs {needed}")]
    InsufficientUninked {
        class: String,
        available: usize,
        needed: usize,
    },
    #[error("sampling ratio must be positive and finite, got {0}")]
    BadRatio(f64),

    #[error("incompatible reports: {0}")]
    IncompatibleReports(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("image {image_id:?}: {source}")]
    Image {
        image_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the image being processed when the error surfaced.
    pub fn for_image(self, image_id: &str) -> Self {
        match self {
            e @ Error::Image { .. } => e,
            e => Error::Image {
                image_id: image_id.to_string(),
                source: Box::new(e),
            },
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::BadMagic => "BadMagic",
            Error::BadHeader(_) => "BadHeader",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::ManifestSyntax { .. } => "ManifestSyntax",
            Error::DuplicateImageId(_) => "DuplicateImageId",
            Error::UnknownClassLabel { .. } => "UnknownClassLabel",
            Error::MissingField { .. } => "MissingField",
            Error::BadConfidences { .. } => "BadConfidences",
            Error::ClassOutOfRange { .. } => "ClassOutOfRange",
            Error::EmptyActivation => "EmptyActivation",
            Error::IdMismatch(..) => "IdMismatch",
            Error::EmptyMask(_) => "EmptyMask",
            Error::BadPercentile(_) => "BadPercentile",
            Error::DegenerateDistribution => "DegenerateDistribution",
            Error::EmptyInput(_) => "EmptyInput",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::TooFewPoints(_) => "TooFewPoints",
            Error::TooFewGroups(_) => "TooFewGroups",
            Error::TooFewNonzeroDiffs { .. } => "TooFewNonzeroDiffs",
            Error::ZeroVariance(_) => "ZeroVariance",
            Error::MissingMask(_) => "MissingMask",
            Error::MissingPrediction(_) => "MissingPrediction",
            Error::MissingSaliency { .. } => "MissingSaliency",
            Error::InsufficientUninked { .. } => "InsufficientUninked",
            Error::BadRatio(_) => "BadRatio",
            Error::IncompatibleReports(_) => "IncompatibleReports",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Image { source, .. } => source.code(),
            Error::Json(_) => "Json",
        }
    }

    /// Image id attached via [`Error::for_image`], if any.
    pub fn image_id(&self) -> Option<&str> {
        match self {
            Error::Image { image_id, .. } => Some(image_id),
            _ => None,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("manifest row {row}: {message}")]
    ManifestRow { row: usize, message: String },

    #[error("duplicate cell_id `{0}` in manifest")]
    DuplicateCellId(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("invalid split policy: {0}")]
    InvalidPolicy(String),

    #[error("split request cannot be satisfied: {0}")]
    InsufficientPool(String),

    #[error("split references unknown cell_id `{0}`")]
    UnknownCellId(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthSpec(String),

    #[error("invalid augmentation: {0}")]
    InvalidAugmentation(String),

    #[error("missing {channel} image for cell `{cell_id}`")]
    MissingChannel { cell_id: String, channel: String },

    #[error("invalid backbone: {0}")]
    InvalidBackbone(String),

    #[error("backbone `{0}` is a registry slot without an in-tree implementation")]
    BackboneUnavailable(String),

    #[error("unknown backbone `{0}`")]
    UnknownBackbone(String),

    #[error("weight archive: tensor `{name}`: {message}")]
    ArchiveTensor { name: String, message: String },

    #[error("weight archive: {0}")]
    Archive(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),

    #[error("metrics undefined for an empty confusion matrix")]
    EmptyConfusion,

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("degenerate test input: {0}")]
    Degenerate(String),

    #[error("config {location}: {message}")]
    Config { location: String, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn stage(stage: impl Into<String>, source: Error) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(source),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

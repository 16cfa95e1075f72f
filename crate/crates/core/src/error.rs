use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("layer {layer}: {message}")]
    Layer { layer: String, message: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("transform for speaker `{transform}` applied to speaker `{features}`")]
    SpeakerMismatch { transform: String, features: String },

    #[error("dropout plan has no entry for layer {0}")]
    UnknownDropoutLayer(u32),

    #[error("dropout mask mismatch between gradient and curvature phases: {0}")]
    MaskMismatch(String),

    #[error("seed registry already populated for HF iteration {0}")]
    RegistryPopulated(usize),

    #[error("conjugate gradient breakdown: {0}")]
    CgBreakdown(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("incomparable reports: {0}")]
    Incomparable(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    pub fn layer(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Layer { layer: layer.into(), message: message.into() }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.into().in_stage(stage))
    }
}

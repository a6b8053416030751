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

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("registration failed: {0}")]
    Registration(String),

    #[error("prior is zero everywhere inside the mask; class has no samples")]
    EmptyClass,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("density model error: {0}")]
    Model(String),

    #[error("segmentation failed: class {class} collapsed at iteration {iteration}: {reason}")]
    Segmentation {
        class: &'static str,
        iteration: usize,
        reason: String,
    },

    #[error("preprocessing error: {0}")]
    Preprocessing(String),

    #[error("cerebellum isolation error: {0}")]
    Isolation(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("case rejected: warped atlas tissue Dice {dice:.3} below gate {gate:.3}")]
    CaseRejected { dice: f64, gate: f64 },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}

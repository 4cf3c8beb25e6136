use thiserror::Error;

#[derive(Debug, Error)]
pub enum AeroError {
    #[error(transparent)]
    Dsp(#[from] aero_dsp::DspError),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model: {0}")]
    Model(String),

    #[error("non-finite activation in {layer}")]
    NonFinite { layer: String },

    #[error("training aborted at step {step}: non-finite loss ({details})")]
    Diverged { step: u64, details: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },

    #[error("data: {0}")]
    Data(String),

    #[error("metric unavailable: {0}")]
    MetricUnavailable(String),

    #[error("metric failed: {0}")]
    Metric(String),

    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl AeroError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, AeroError>;

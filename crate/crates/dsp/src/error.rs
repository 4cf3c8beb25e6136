use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid STFT configuration: {0}")]
    InvalidConfig(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("window overlap-add violation for {config}: normalization {value:e} at sample {index}")]
    Cola {
        config: String,
        index: usize,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("wav i/o: {0}")]
    Wav(#[from] hound::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

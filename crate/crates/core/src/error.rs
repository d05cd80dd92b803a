use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error at `{layer}`: {detail}")]
    Shape { layer: String, detail: String },

    #[error("state error: {0}")]
    State(String),

    #[error("image {height}x{width} is smaller than one {side}px tile")]
    TooSmall { height: usize, width: usize, side: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("degenerate calibration: all decision values equal {0}")]
    DegenerateCalibration(f64),

    #[error("stratification error: class {class} has {count} example(s), need at least 2")]
    Stratification { class: usize, count: usize },

    #[error("{kind} undefined for class {class}: zero denominator")]
    UndefinedForClass { kind: &'static str, class: usize },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("corrupt corpus: {0}")]
    CorruptCorpus(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty supervision: no labeled pixels")]
    EmptySupervision,
    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),
    #[error("track {0} is absent from every view")]
    TrackAbsent(u32),
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("degenerate scene spec: {0}")]
    DegenerateSpec(String),
    #[error("provider failed for view {view}: {source}")]
    Provider {
        view: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { format, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attaches the view index to an error raised while fetching per-view inputs.
    pub fn for_view(self, view: usize) -> Self {
        Error::Provider { view, source: Box::new(self) }
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Image(#[from] imgcore::ImgError),

    #[error(transparent)]
    Grad(#[from] gradcore::GradError),

    #[error("{0}")]
    Invalid(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("record `{id}`: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

impl Error {
    pub(crate) fn in_record(self, id: &str) -> Error {
        if matches!(&self, Error::Record { id: inner, .. } if inner == id) {
            return self;
        }
        Error::Record {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    /// Maps a non-finite optimizer update at `step` to [`Error::Diverged`].
    pub(crate) fn at_step(e: gradcore::GradError, step: usize) -> Error {
        match e {
            gradcore::GradError::NonFinite(msg) => Error::Diverged(format!("step {step}: {msg}")),
            other => other.into(),
        }
    }
}

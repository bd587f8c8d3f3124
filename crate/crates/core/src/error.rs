use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the free-boundary toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A numerical argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The cubic `t^3 - h t^2 + m^2` has no positive root (`h < h#`).
    #[error("no positive root: h = {h} is below the critical height h# = {h_sharp}")]
    NoRoot { h: f64, h_sharp: f64 },

    /// Grid or run configuration is inconsistent.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// A field violates its Dirichlet mask or sign constraint.
    #[error("field invariant violated: {0}")]
    Invariant(String),

    /// A diagnostic has too little data to be defined.
    #[error("not defined: {0}")]
    NotDefined(String),

    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NoRoot { .. } => "no_root",
            Error::Config { .. } => "config",
            Error::Invariant(_) => "invariant",
            Error::NotDefined(_) => "not_defined",
            Error::Artifact { .. } => "artifact",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit status: 2 for configuration and input problems
    /// (including unreadable artifacts and unwritable outputs), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Artifact { .. } | Error::Io { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

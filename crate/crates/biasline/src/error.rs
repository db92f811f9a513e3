use std::io;
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Malformed content at a known location in an input file.
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },

    /// Lexicon files violate a bundle invariant (duplicates, overlap, bad values).
    #[error("lexicon: {0}")]
    Lexicon(String),

    /// Bad flags, bad paths, invalid spec files — anything the user must fix
    /// before a run can start.
    #[error("config: {0}")]
    Config(String),

    #[error("lexicon digest mismatch: input built with {found}, current bundle is {expected}")]
    DigestMismatch { expected: String, found: String },

    /// Undefined metric (zero variance, empty intersection, no counts, ...).
    #[error("{0}")]
    Metric(String),

    #[error("endpoint rejected credentials (HTTP {status})")]
    AuthFailed { status: u16 },

    /// Generation-harness failure that is not an auth problem.
    #[error("generation: {0}")]
    Generation(String),

    #[error("report: {0}")]
    Report(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Io { path, source }
    }

    /// Process exit code for the CLI: config errors 2, auth 3, runtime I/O 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Lexicon(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::DigestMismatch { .. }
            | Error::Metric(_) => 2,
            Error::AuthFailed { .. } => 3,
            Error::Io { .. } | Error::Generation(_) | Error::Report(_) => 1,
        }
    }
}

use std::path::{Path, PathBuf};

/// Errors of the harness. Every variant maps onto a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] cgt_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A file exists but its content is malformed or inconsistent.
    #[error("{}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
    /// An artifact an orchestration step depends on is missing.
    #[error("missing artifact {}: run `{step}` first", path.display())]
    Missing { path: PathBuf, step: &'static str },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub const EXIT_ARGUMENT: i32 = 2;
pub const EXIT_INTEGRITY: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl Error {
    pub fn exit_code(&self) -> i32 {
        use cgt_core::Error as C;
        match self {
            Self::Usage(_) => EXIT_ARGUMENT,
            Self::Io { .. } | Self::Data { .. } | Self::Missing { .. } => EXIT_INTEGRITY,
            Self::Core(e) => match e {
                C::Argument(_) => EXIT_ARGUMENT,
                C::Numeric(_) | C::UndefinedChange(_) | C::Training(_) => EXIT_NUMERIC,
                C::Input(_) | C::Format(_) | C::CorruptModel(_) | C::Integrity(_) | C::IncompletePairing(_) => {
                    EXIT_INTEGRITY
                }
            },
        }
    }

    pub(crate) fn data(path: &Path, msg: impl std::fmt::Display) -> Self {
        Self::Data {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        }
    }
}

/// Attaches a path to IO errors.
pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    Ok(())
}

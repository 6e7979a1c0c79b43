use std::io;
use std::path::{Path, PathBuf};

/// Failure of a lab operation, grouped by what the caller should fix.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

impl LabError {
    /// Process exit code: 2 for configuration, 3 for data, 4 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config(_) => 2,
            LabError::Data(_) | LabError::Io { .. } => 3,
            LabError::Numerical(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        LabError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        LabError::Data(msg.into())
    }
}

impl From<edgelab_core::Error> for LabError {
    fn from(e: edgelab_core::Error) -> Self {
        use edgelab_core::Error as E;
        match e {
            E::InvalidArgument { .. } => LabError::Config(e.to_string()),
            E::Data(_) | E::ShapeMismatch { .. } => LabError::Data(e.to_string()),
            E::NonFinite { .. } | E::NonScalarLoss(_) | E::DetachedVar => LabError::Numerical(e.to_string()),
        }
    }
}

/// Attaches a path to an IO error.
pub trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| LabError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

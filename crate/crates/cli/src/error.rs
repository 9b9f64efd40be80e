use std::path::PathBuf;

use crate::jobs::JobListError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_MISSING: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] uvrefine::Error),

    #[error("numerical failure in stage {stage} at scale {scale}, iteration {iteration}: non-finite {term} loss")]
    Numerical {
        stage: usize,
        scale: usize,
        iteration: usize,
        term: String,
    },

    #[error("missing checkpoints in {}: expected {}", dir.display(), expected.join(", "))]
    MissingCheckpoints { dir: PathBuf, expected: Vec<String> },

    #[error("download of {url} failed: {message}")]
    Download { url: String, message: String },

    #[error(transparent)]
    Jobs(#[from] JobListError),

    #[error("{failed} of {total} jobs failed")]
    Batch { failed: usize, total: usize, code: i32 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use uvrefine::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::NonFinite { .. } => EXIT_NUMERICAL,
                E::MissingArtifact(_) | E::MissingWeights { .. } => EXIT_MISSING,
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
                E::Io { .. } => 1,
                _ => EXIT_CONFIG,
            },
            CliError::Numerical { .. } => EXIT_NUMERICAL,
            CliError::MissingCheckpoints { .. } | CliError::Download { .. } => EXIT_MISSING,
            CliError::Jobs(_) => EXIT_CONFIG,
            CliError::Batch { code, .. } => *code,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING,
            CliError::Io { .. } => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use std::path::PathBuf;

use imc_core::qat::{Checkpoint, QatError};
use thiserror::Error;

/// Failure of a harness command, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}; last good checkpoint: {}", path.display())]
    Diverged {
        epoch: usize,
        batch: usize,
        path: PathBuf,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),
    #[error("{0}")]
    Model(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Diverged { .. } | HarnessError::Numerical(_) => 2,
            HarnessError::OracleMismatch(_) => 3,
            HarnessError::Model(_) | HarnessError::Io { .. } => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn model(e: impl std::fmt::Display) -> Self {
        HarnessError::Model(e.to_string())
    }

    /// Converts a training error, saving the last good parameters of a
    /// diverged run to `checkpoint_path`.
    pub fn from_training(e: QatError, checkpoint_path: PathBuf) -> Self {
        match e {
            QatError::Diverged {
                epoch,
                batch,
                last_good,
            } => match save_last_good(&last_good, &checkpoint_path) {
                Ok(()) => HarnessError::Diverged {
                    epoch,
                    batch,
                    path: checkpoint_path,
                },
                Err(err) => err,
            },
            QatError::Config(m) => HarnessError::Config(m),
            QatError::Quant(q) => HarnessError::Config(q.to_string()),
            other => HarnessError::Model(other.to_string()),
        }
    }
}

fn save_last_good(ck: &Checkpoint, path: &std::path::Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir.display().to_string(), e))?;
    }
    ck.save(path).map_err(HarnessError::model)
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Model(format!("csv: {e}"))
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

//! On-disk feedback session used by the `search` and `feedback` commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wordspot_core::{CorpusIndex, FeedbackSession};

use crate::error::AppError;

pub const SESSION_FORMAT: &str = "wordspot-session";
pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionFile {
    pub format: String,
    pub version: u32,
    /// Index the session was opened against, as given on the command line.
    pub index_path: PathBuf,
    /// Hex SHA-256 of the index file at that time.
    pub index_sha256: String,
    pub session: FeedbackSession,
}

pub fn file_digest(path: &Path) -> Result<String, AppError> {
    let bytes = fs::read(path).map_err(|e| AppError::Path(path.to_path_buf(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl SessionFile {
    pub fn new(index_path: &Path, session: FeedbackSession) -> Result<Self, AppError> {
        Ok(Self {
            format: SESSION_FORMAT.into(),
            version: SESSION_VERSION,
            index_path: index_path.to_path_buf(),
            index_sha256: file_digest(index_path)?,
            session,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), AppError> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| AppError::Path(path.to_path_buf(), e))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = fs::read_to_string(path).map_err(|e| AppError::Path(path.to_path_buf(), e))?;
        let file: SessionFile = serde_json::from_str(&text)?;
        if file.format != SESSION_FORMAT {
            return Err(AppError::Session(format!("not a session file (format {:?})", file.format)));
        }
        if file.version != SESSION_VERSION {
            return Err(AppError::Session(format!("unsupported session version {}", file.version)));
        }
        Ok(file)
    }

    /// Loads the recorded index, refusing one that changed since the
    /// session began.
    pub fn open_index(&self) -> Result<CorpusIndex, AppError> {
        let digest = file_digest(&self.index_path)?;
        if digest != self.index_sha256 {
            return Err(AppError::Session(format!(
                "{} changed since the session was created",
                self.index_path.display()
            )));
        }
        Ok(CorpusIndex::load(&self.index_path)?)
    }
}

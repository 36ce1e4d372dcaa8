use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skipgp::SavedModel;

use crate::error::{CliError, CliResult};
use crate::report::{Standardization, VERSION};

/// Writes a file atomically: the contents land in a temporary file in the
/// same directory and are renamed into place, so readers never observe a
/// partial write.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, &e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(|e| CliError::io(dir, &e))?;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| CliError::io(dir, &e))?;
    let target = dir.join(name);
    tmp.persist(&target)
        .map_err(|e| CliError::io(&target, &e.error))?;
    Ok(target)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::internal(format!("serializing {name}: {e}")))?;
    text.push('\n');
    write_atomic(dir, name, &text)
}

/// On-disk model document: the library's saved model plus the input schema
/// and standardization needed to run it on fresh CSV files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: String,
    pub feature_columns: Vec<String>,
    pub target_column: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
    pub saved_model: serde_json::Value,
}

impl ModelArtifact {
    pub fn new(
        saved: &SavedModel,
        feature_columns: Vec<String>,
        target_column: String,
        standardization: Option<Standardization>,
    ) -> CliResult<Self> {
        let saved_model = serde_json::to_value(saved)
            .map_err(|e| CliError::internal(format!("serializing model: {e}")))?;
        Ok(Self {
            version: VERSION.to_string(),
            feature_columns,
            target_column,
            standardization,
            saved_model,
        })
    }

    pub fn save(&self, dir: &Path) -> CliResult<PathBuf> {
        write_json(dir, "model.json", self)
    }

    /// Loads and checksum-verifies a model document. Every failure mode
    /// (missing file, malformed JSON, checksum mismatch) reports as a model
    /// artifact error.
    pub fn load(path: &Path) -> CliResult<(Self, SavedModel)> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::model(format!("cannot read model file {}: {e}", path.display()))
        })?;
        let artifact: ModelArtifact = serde_json::from_str(&text).map_err(|e| {
            CliError::model(format!("malformed model file {}: {e}", path.display()))
        })?;
        let saved_text = serde_json::to_string(&artifact.saved_model)
            .map_err(|e| CliError::model(format!("{}: {e}", path.display())))?;
        let saved = SavedModel::from_json(&saved_text)
            .map_err(|e| CliError::model(format!("{}: {e}", path.display())))?;
        Ok((artifact, saved))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_the_directory_and_file() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("a/b");
        let path = write_atomic(&nested, "out.txt", "hello").unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "hello");
        // No temporary files left behind.
        let leftovers: Vec<_> = std::fs::read_dir(&nested)
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with(".tmp-")
            })
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn loading_a_missing_model_is_a_model_artifact_error() {
        let err = ModelArtifact::load(Path::new("/nope/model.json")).unwrap_err();
        assert_eq!(err.kind, crate::error::ErrorKind::ModelArtifact);
    }
}

//! Run manifests: a JSON record of what a command did — the resolved
//! configuration, content digests of every input file, the list of
//! files written, and the seed — so a finished run can be audited or
//! replayed bit for bit later.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EvmemError, Result};
use crate::hashing::digest_hex;

/// One input file and the digest of its bytes at run time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub digest: String,
}

/// Everything needed to audit or re-run a finished command.
///
/// `config` holds the fully resolved settings (defaults and config-file
/// values already folded in) as strings keyed by flag name, so a replay
/// does not depend on what the defaults happen to be later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub duration_ms: u64,
    pub seed: u64,
}

/// Digest of a file's raw bytes, as 16 lowercase hex digits.
pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| EvmemError::io(path.display().to_string(), e))?;
    Ok(digest_hex(&bytes))
}

impl RunManifest {
    /// Records `path` as an input, digesting its current contents.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            digest: digest_file(path)?,
        });
        Ok(())
    }

    /// Records `path` as an output of the run.
    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    /// Writes the manifest atomically: the JSON goes to a temporary
    /// file next to `path` and is renamed into place, so a crash never
    /// leaves a half-written manifest behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = Path::new(&tmp);
        fs::write(tmp, self.to_json()).map_err(|e| EvmemError::io(tmp.display().to_string(), e))?;
        fs::rename(tmp, path).map_err(|e| EvmemError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| EvmemError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| EvmemError::Format {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Confirms every recorded input still has the recorded digest.
    /// A mismatch means the replay would not reproduce the original run.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let actual = digest_file(Path::new(&input.path))?;
            if actual != input.digest {
                return Err(EvmemError::Config(format!(
                    "input {} has digest {actual}, but the manifest records {}; \
                     the file changed since the original run",
                    input.path, input.digest
                )));
            }
        }
        Ok(())
    }

    /// Fetches a required config value, parsed as `T`.
    pub fn config_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.config.get(key).ok_or_else(|| {
            EvmemError::Config(format!("manifest config is missing the key `{key}`"))
        })?;
        raw.parse().map_err(|_| {
            EvmemError::Config(format!("manifest config key `{key}` has unusable value `{raw}`"))
        })
    }

    /// Fetches an optional config value, parsed as `T` when present.
    pub fn config_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.config.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                EvmemError::Config(format!(
                    "manifest config key `{key}` has unusable value `{raw}`"
                ))
            }),
        }
    }
}

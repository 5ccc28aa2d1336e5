use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Keys whose values change between otherwise identical runs.
pub const VOLATILE_KEYS: [&str; 2] = ["timestamp", "duration_ms"];

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Provenance record written next to each stage's outputs.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub stage: String,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<PathBuf>,
    pub parameters: KeyValues,
    pub seed: Option<u64>,
    pub duration: Duration,
}

impl Manifest {
    pub fn render(&self) -> Result<String> {
        let mut kv = KeyValues::new();
        kv.set("stage", &self.stage);
        for (name, path) in &self.inputs {
            kv.set(format!("input.{name}"), path.display());
            kv.set(format!("input.{name}.sha256"), sha256_file(path)?);
        }
        for path in &self.outputs {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            kv.set(format!("output.{name}.sha256"), sha256_file(path)?);
        }
        for (k, v) in self.parameters.iter() {
            kv.set(format!("param.{k}"), v);
        }
        if let Some(seed) = self.seed {
            kv.set("seed", seed);
        }
        kv.set("duration_ms", self.duration.as_millis());
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        kv.set("timestamp", now.as_secs());
        Ok(kv.render())
    }

    /// Writes `<dir>/manifest.<stage>.txt`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("manifest.{}.txt", self.stage));
        std::fs::write(&path, self.render()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Manifest text with volatile lines removed.
pub fn stable_lines(text: &str) -> String {
    text.lines()
        .filter(|l| {
            let key = l.split('=').next().unwrap_or("").trim();
            !VOLATILE_KEYS.contains(&key)
        })
        .map(|l| format!("{l}\n"))
        .collect()
}

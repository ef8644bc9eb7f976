use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::failure::CmdResult;

/// Files written by one command, recorded with their SHA-256.
pub struct Manifest {
    command: String,
    config: String,
    artifacts: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, config: String) -> Self {
        Self {
            command: command.to_string(),
            config,
            artifacts: Vec::new(),
        }
    }

    /// Writes `bytes` to `path` and records it.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> CmdResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| io_failure(path, e))?;
        self.record(path);
        Ok(())
    }

    pub fn record(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    /// `[config]` echo followed by `sha256  path` lines, saved as
    /// `<dir>/manifest-<command>.txt`.
    pub fn finish(self, dir: &Path) -> CmdResult<PathBuf> {
        let mut text = format!("# attnet {}\n[config]\n{}[artifacts]\n", self.command, self.config);
        for path in &self.artifacts {
            let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
            let shown = path.strip_prefix(dir).unwrap_or(path);
            text.push_str(&format!("{}  {}\n", hex::encode(Sha256::digest(&bytes)), shown.display()));
        }
        let out = dir.join(format!("manifest-{}.txt", self.command));
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        fs::write(&out, text).map_err(|e| io_failure(&out, e))?;
        Ok(out)
    }
}

pub fn io_failure(path: &Path, e: std::io::Error) -> crate::failure::Failure {
    crate::failure::Failure::Runtime {
        category: "io".into(),
        message: format!("i/o error on {}: {e}", path.display()),
    }
}

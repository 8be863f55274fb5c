use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::config::{Settings, ECHO_FILE};
use crate::error::{CliError, CliResult};

pub const LOCK_FILE: &str = ".aift.lock";

/// An output directory held exclusively for the lifetime of a command.
#[derive(Debug)]
pub struct OutDir {
    path: PathBuf,
}

impl OutDir {
    /// Creates `path` (or reuses it under `force`) and takes its lock file.
    /// A non-empty directory is refused unless `force` is set.
    pub fn acquire(path: &Path, force: bool) -> CliResult<Self> {
        fs::create_dir_all(path)?;
        let lock = path.join(LOCK_FILE);
        if lock.exists() {
            return Err(CliError::Locked(path.display().to_string()));
        }
        if !force && fs::read_dir(path)?.next().is_some() {
            return Err(CliError::config(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                path.display()
            )));
        }
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(OutDir { path: path.to_path_buf() }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Locked(path.display().to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }

    pub fn write_echo(&self, settings: &Settings) -> CliResult<()> {
        fs::write(self.join(ECHO_FILE), settings.echo())?;
        Ok(())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_non_empty_without_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), "1").unwrap();
        assert!(OutDir::acquire(dir.path(), false).is_err());
        assert!(OutDir::acquire(dir.path(), true).is_ok());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let held = OutDir::acquire(&out, false).unwrap();
        assert!(matches!(OutDir::acquire(&out, true), Err(CliError::Locked(_))));
        drop(held);
        assert!(!out.join(LOCK_FILE).exists());
        assert!(OutDir::acquire(&out, false).is_ok());
    }
}

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::CliError;

const LOCK: &str = ".lock";
const FAILED: &str = ".failed";

/// Exclusive claim on an output directory for the lifetime of one command.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => {
                let _ = fs::write(&path, format!("{}\n", std::process::id()));
                Ok(Self { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Validation(format!(
                "{} is in use by another command (delete {} if that command is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::Runtime(format!("cannot lock {}: {e}", dir.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Runs `body` inside a locked `dir`. Any failure after the directory exists
/// leaves a `.failed` marker holding the error message.
pub fn in_run_dir<T>(dir: &Path, body: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let _lock = RunLock::acquire(dir)?;
    let marker = dir.join(FAILED);
    let _ = fs::remove_file(&marker);
    body().inspect_err(|e| {
        let _ = fs::write(&marker, format!("{e}\n"));
    })
}

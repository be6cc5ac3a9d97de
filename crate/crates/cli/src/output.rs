//! All-or-nothing output files: everything is written to temporaries next to
//! the targets and renamed into place only when the command succeeds.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::CliError;

#[derive(Default)]
pub struct Outputs {
    pending: Vec<(NamedTempFile, PathBuf)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stages `contents` for `path`.
    pub fn stage(&mut self, path: &Path, contents: &[u8]) -> Result<(), CliError> {
        let mut file = self.open(path)?;
        file.write_all(contents)
            .map_err(|e| CliError::data(format!("writing {}: {e}", path.display())))?;
        self.pending.push((file, path.to_path_buf()));
        Ok(())
    }

    /// A staged file to be filled incrementally, e.g. a log.
    pub fn open(&self, path: &Path) -> Result<NamedTempFile, CliError> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        NamedTempFile::new_in(dir).map_err(|e| CliError::data(format!("cannot write to {}: {e}", dir.display())))
    }

    pub fn push(&mut self, file: NamedTempFile, path: &Path) {
        self.pending.push((file, path.to_path_buf()));
    }

    /// Renames every staged file into place.
    pub fn commit(self) -> Result<(), CliError> {
        for (file, path) in self.pending {
            file.persist(&path)
                .map_err(|e| CliError::data(format!("cannot create {}: {}", path.display(), e.error)))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_appears_until_commit() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out.txt");
        let mut out = Outputs::new();
        out.stage(&target, b"hello").unwrap();
        assert!(!target.exists());
        out.commit().unwrap();
        assert_eq!(std::fs::read_to_string(&target).unwrap(), "hello");
    }

    #[test]
    fn dropped_outputs_leave_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out.txt");
        {
            let mut out = Outputs::new();
            out.stage(&target, b"partial").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}

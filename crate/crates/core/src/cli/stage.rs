//! Outputs are written into a hidden sibling directory and moved into place
//! only once a command has fully succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use pdsm::{Error, Result};
use tempfile::TempDir;

pub struct Stage {
    tmp: TempDir,
    out: PathBuf,
}

impl Stage {
    pub fn new(out: &Path) -> Result<Self> {
        if out.exists() && !out.is_dir() {
            return Err(Error::validation(format!(
                "output path {} exists and is not a directory",
                out.display()
            )));
        }
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let tmp = tempfile::Builder::new()
            .prefix(".pdsm-stage-")
            .tempdir_in(parent)
            .map_err(|e| Error::io(parent, e))?;
        Ok(Stage {
            tmp,
            out: out.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    /// Moves staged entries into the output directory, replacing entries of
    /// the same name.
    pub fn commit(self) -> Result<()> {
        if !self.out.exists() {
            let staged = self.tmp.keep();
            return fs::rename(&staged, &self.out).map_err(|e| Error::io(&self.out, e));
        }
        let entries = fs::read_dir(self.tmp.path()).map_err(|e| Error::io(self.tmp.path(), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(self.tmp.path(), e))?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
            } else if target.exists() {
                fs::remove_file(&target).map_err(|e| Error::io(&target, e))?;
            }
            fs::rename(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
        Ok(())
    }
}

//! Artifact directory writing with cleanup on failure.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// Tracks files written into a directory so a failed run can remove them.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let created_root = !root.exists();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            created_root,
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Writes a file through `fill`, recording it for cleanup.
    pub fn write_with(&mut self, name: &str, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.root.join(name);
        self.written.push(path.clone());
        let mut w = BufWriter::new(fs::File::create(&path)?);
        fill(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    /// Removes everything written so far, and the directory if this run made it.
    pub fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_root {
            let _ = fs::remove_dir(&self.root);
        }
    }

    /// Runs `body`; on error removes partial output before returning it.
    pub fn write_all(root: impl AsRef<Path>, body: impl FnOnce(&mut OutputDir) -> Result<()>) -> Result<()> {
        let mut out = Self::create(root)?;
        match body(&mut out) {
            Ok(()) => Ok(()),
            Err(e) => {
                out.discard();
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn failure_removes_partial_files() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let res = OutputDir::write_all(&dir, |out| {
            out.write_json("a.json", &[1, 2])?;
            Err(Error::Input("boom".into()))
        });
        assert!(res.is_err());
        assert!(!dir.exists());

        OutputDir::write_all(&dir, |out| out.write_json("a.json", &[1, 2])).unwrap();
        assert_eq!(fs::read_to_string(dir.join("a.json")).unwrap(), "[\n  1,\n  2\n]\n");
    }
}

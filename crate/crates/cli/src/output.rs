//! All-or-nothing output: files are staged in memory and committed together.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn add_json<T: serde::Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(path, bytes);
        Ok(())
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    /// Writes every file through a temporary sibling and renames it into
    /// place. On any failure, files already committed by this call and all
    /// temporaries are removed.
    pub fn commit(self) -> Result<()> {
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let mut committed: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<()> {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)
                        .with_context(|| format!("creating {}", dir.display()))?;
                }
                let tmp = temp_path(path);
                staged.push((tmp.clone(), path.clone()));
                fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
            }
            for (tmp, path) in &staged {
                fs::rename(tmp, path).with_context(|| format!("writing {}", path.display()))?;
                committed.push(path.clone());
            }
            Ok(())
        })();
        if result.is_err() {
            for (tmp, _) in &staged {
                let _ = fs::remove_file(tmp);
            }
            for path in &committed {
                let _ = fs::remove_file(path);
            }
        }
        result
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.partial"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::new();
        out.add(dir.path().join("a.txt"), b"one".to_vec());
        out.add(dir.path().join("sub/b.txt"), b"two".to_vec());
        out.commit().unwrap();
        assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), b"one");
        assert_eq!(fs::read(dir.path().join("sub/b.txt")).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn failed_commit_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        // a regular file where a directory is needed makes the second write fail
        fs::write(dir.path().join("blocker"), b"").unwrap();
        let mut out = Outputs::new();
        out.add(dir.path().join("a.txt"), b"one".to_vec());
        out.add(dir.path().join("blocker/b.txt"), b"two".to_vec());
        assert!(out.commit().is_err());
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("blocker")]);
    }
}

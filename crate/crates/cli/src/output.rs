use std::fs;
use std::path::{Path, PathBuf};

use gsal_core::Error;
use serde::Serialize;

/// Writes a structured error as one JSON line on stderr.
pub fn report_error(e: &Error) {
    let line = serde_json::json!({
        "error": {
            "code": e.code(),
            "message": e.to_string(),
            "image_id": e.image_id(),
        }
    });
    eprintln!("{line}");
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Collects output files and commits them together.
///
/// Contents are staged in memory; [`Outputs::commit`] writes each file under a
/// temporary name and renames it into place. If any step fails, every file
/// already written is removed.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, Error> {
        let mut written: Vec<PathBuf> = Vec::new();
        let result = (|| {
            for (name, contents) in &self.files {
                let target = self.dir.join(name);
                if let Some(parent) = target.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                let tmp = target.with_file_name(format!(
                    ".{}.tmp",
                    target.file_name().unwrap_or_default().to_string_lossy()
                ));
                written.push(tmp.clone());
                fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
                fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
                written.pop();
                written.push(target);
            }
            Ok(())
        })();
        match result {
            Ok(()) => Ok(written),
            Err(e) => {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                Err(e)
            }
        }
    }
}

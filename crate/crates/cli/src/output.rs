use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::CliError;

fn staged(path: &Path, bytes: &[u8]) -> Result<NamedTempFile, CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| CliError::Failure(format!("cannot write {}: {e}", path.display()));
    let mut file = NamedTempFile::new_in(dir).map_err(fail)?;
    file.write_all(bytes).map_err(fail)?;
    file.as_file().sync_all().map_err(fail)?;
    Ok(file)
}

/// Writes every file or none: contents are staged next to their targets and
/// renamed into place only once all of them are complete.
pub fn write_all_or_nothing(files: &[(PathBuf, Vec<u8>)]) -> Result<(), CliError> {
    let mut temps = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        temps.push((path, staged(path, bytes)?));
    }
    let mut written: Vec<&PathBuf> = Vec::new();
    for (path, temp) in temps {
        if let Err(e) = temp.persist(path) {
            for done in written {
                let _ = fs::remove_file(done);
            }
            return Err(CliError::Failure(format!("cannot write {}: {}", path.display(), e.error)));
        }
        written.push(path);
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_all_or_nothing(&[(path.to_path_buf(), bytes.to_vec())])
}

/// Appends `ext` to the full file name, so `out/run.v2` becomes `out/run.v2.csv`.
pub fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

//! Small filesystem helpers shared by artifact writers.

use std::fs;
use std::io;
use std::path::Path;

/// Write `bytes` to `path` atomically: stage into a sibling temp file and
/// rename over the target, so interrupted writes never leave truncated
/// artifacts behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

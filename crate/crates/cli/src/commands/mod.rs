pub mod eval;
pub mod fuse;
pub mod loss;
pub mod project;
pub mod retrieve;
pub mod synth;

use std::path::Path;

use crate::error::{CliError, CliResult};

/// Create `dir` and any missing parents.
pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Core(cvl_core::Error::Io { path: dir.into(), source: e }))
}

/// Write a text file in one shot.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Core(cvl_core::Error::Io { path: path.into(), source: e }))
}

/// Read a whole text file.
pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Core(cvl_core::Error::Io { path: path.into(), source: e }))
}

/// Lines that carry content: trimmed, skipping blanks and `#` comments,
/// paired with their 1-based line numbers for error reporting.
pub fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim()))
        .filter(|(_, line)| !line.is_empty() && !line.starts_with('#'))
}

//! Audio files, experiment configs, and atomic output helpers.

mod audio;
mod config;

pub use audio::{read_audio, write_audio, QUANT_STEP};
pub use config::{parse_config, parse_config_str};

use std::fs::File;
use std::path::Path;

use crate::error::Result;

/// Writes through a temporary file in the destination directory and renames
/// it into place only when `write` succeeds.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut File) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write(tmp.as_file_mut())?;
    tmp.as_file_mut().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

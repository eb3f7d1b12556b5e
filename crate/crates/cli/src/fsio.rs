//! File access for subcommands: whole-file reads and atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;
use wafertex_core::imageio::{decode_pfm, decode_pgm, ImageFormat};
use wafertex_core::Tensor;

use crate::error::CliError;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| CliError::invalid(format!("{}: not UTF-8", path.display())))
}

pub fn read_image(path: &Path) -> Result<Tensor, CliError> {
    let format = ImageFormat::from_path(path).ok_or_else(|| {
        CliError::invalid(format!("{}: expected a .pgm or .pfm file", path.display()))
    })?;
    let bytes = read_bytes(path)?;
    let decoded = match format {
        ImageFormat::Pgm => decode_pgm(&bytes),
        ImageFormat::Pfm => decode_pfm(&bytes),
    };
    decoded.map_err(|e| CliError::core_at(path, e))
}

/// Output directory, created on demand.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes through a temporary file in the same directory and renames
    /// it into place, so readers never see a partial file.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path(name);
        let io = |e| CliError::io(&target, e);
        let mut tmp = NamedTempFile::new_in(&self.root).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&target).map_err(|e| io(e.error))?;
        Ok(())
    }
}

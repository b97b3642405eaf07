//! File formats: PFM images, the binary basis/checkpoint containers,
//! key=value configuration files and the on-disk dataset layout.

pub mod config;
pub mod container;
pub mod dataset;
pub mod kv;
pub mod pfm;

pub use container::{read_basis, read_model, write_basis, write_model};
pub use pfm::{read_pfm, read_pfm_any, write_pfm, PfmData};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

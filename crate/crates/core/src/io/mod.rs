//! File formats, configuration and report writers.

mod config;
mod dataset;
pub mod organs;
mod volume_file;

pub use config::{CropRegion, DatasetConfig, RunConfig};
pub use dataset::{
    read_cases, read_manifest, write_dataset, CaseEntry, DatasetManifest, DATASET_MANIFEST,
};
pub use organs::{organ_name, OrganEntry, ORGANS};
pub use volume_file::{
    read_grid, read_labels, read_volume, write_labels, write_volume, AnyGrid, ValueKind,
    VolumeHeader, MAGIC,
};

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

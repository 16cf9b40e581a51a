use std::path::Path;

use serde::{Deserialize, Serialize};

use super::volume_file::{read_labels, read_volume, write_labels, write_volume};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::phantom::{DatasetSplit, Phantom, PhantomGeometry};
use crate::pipeline::LabeledCase;

pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub seed: u64,
    /// File names relative to the dataset directory.
    pub volume: String,
    pub labels: String,
    pub geometry: PhantomGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub split: DatasetSplit,
    pub cases: Vec<CaseEntry>,
}

/// Writes every phantom as a volume/label file pair plus a manifest.
pub fn write_dataset(dir: &Path, seed: u64, phantoms: &[Phantom], split: DatasetSplit) -> Result<DatasetManifest> {
    let mut cases = Vec::with_capacity(phantoms.len());
    for (i, p) in phantoms.iter().enumerate() {
        let volume = format!("case-{i:03}.vol");
        let labels = format!("case-{i:03}.labels.vol");
        write_volume(&dir.join(&volume), &p.volume)?;
        write_labels(&dir.join(&labels), &p.labels)?;
        cases.push(CaseEntry {
            seed: p.seed,
            volume,
            labels,
            geometry: p.geometry.clone(),
        });
    }
    let manifest = DatasetManifest { seed, split, cases };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&dir.join(DATASET_MANIFEST), &bytes)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DATASET_MANIFEST);
    let text = std::fs::read_to_string(&path)?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let n = m.cases.len();
    if let Some(i) = m.split.train.iter().chain(&m.split.val).chain(&m.split.test).find(|&&i| i >= n) {
        return Err(Error::Format {
            path,
            message: format!("split refers to case {i} of {n}"),
        });
    }
    Ok(m)
}

/// Loads the listed cases of a dataset directory.
pub fn read_cases(dir: &Path, manifest: &DatasetManifest, which: &[usize]) -> Result<Vec<LabeledCase>> {
    which
        .iter()
        .map(|&i| {
            let e = &manifest.cases[i];
            let volume = read_volume(&dir.join(&e.volume))?;
            let labels = read_labels(&dir.join(&e.labels))?;
            volume.same_grid(&labels)?;
            Ok(LabeledCase { volume, labels })
        })
        .collect()
}
